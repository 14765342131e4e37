//! Dense symmetric linear algebra kernels.
//!
//! Everything in this module operates on small-to-medium dense matrices and is
//! deterministic: the same input bytes always produce the same output bytes.
//! The kernels cover exactly what the solver layers need: Cholesky and Jacobi
//! eigenfactorizations, log-determinants with rank-one updates, inverse square
//! roots, and elementary symmetric polynomials of eigenvalue vectors.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative pivot threshold for Cholesky factorizations.
pub const PD_PIVOT_RTOL: f64 = 1e-12;
/// Relative off-diagonal convergence threshold for the Jacobi eigensolver.
pub const JACOBI_RTOL: f64 = 1e-12;
/// Maximum number of Jacobi sweeps before giving up.
pub const JACOBI_MAX_SWEEPS: usize = 64;
/// Denominator guard for Sherman-Morrison rank-one updates.
pub const SM_GUARD: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {0})")]
    NotPositiveDefinite(usize),
    #[error("eigendecomposition did not converge within {0} sweeps")]
    NoConvergence(usize),
    #[error("rank-one update would make the matrix singular")]
    SingularUpdate,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix entry ({0},{1}) breaks symmetry")]
    NotSymmetric(usize, usize),
    #[error("non-finite matrix entry at ({0},{1})")]
    NonFinite(usize, usize),
}

/// Dense rectangular matrix in column-major storage.
///
/// Column-major keeps each candidate vector (a column) contiguous, which is
/// the dominant access pattern everywhere in the solver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Builds a matrix from column-major data.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    /// Builds a matrix from row-major data (the interchange layout).
    pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        let mut m = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.set(i, j, data[i * cols + j]);
            }
        }
        Ok(m)
    }

    pub fn from_cols(rows: usize, cols: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let mut data = Vec::with_capacity(rows * cols.len());
        for (j, c) in cols.iter().enumerate() {
            if c.len() != rows {
                return Err(LinalgError::DimensionMismatch(format!(
                    "column {j} has length {}, expected {rows}",
                    c.len()
                )));
            }
            data.extend_from_slice(c);
        }
        Ok(Mat { rows, cols: cols.len(), data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    /// Contiguous view of column `j`.
    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.push(self.get(i, j));
            }
        }
        out
    }

    /// `self * x` for a vector `x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "mul_vec length mismatch");
        let mut y = vec![0.0; self.rows];
        for j in 0..self.cols {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for (yi, mij) in y.iter_mut().zip(self.col(j)) {
                *yi += mij * xj;
            }
        }
        y
    }

    /// Gram matrix `selfᵀ · self`.
    pub fn gram(&self) -> SymMatrix {
        let n = self.cols;
        let mut g = SymMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                g.set(i, j, dot(self.col(i), self.col(j)));
            }
        }
        g
    }

    /// Outer-product sum `self · Diag(w) · selfᵀ` over the given columns.
    pub fn weighted_outer(&self, weights: &[(usize, f64)]) -> SymMatrix {
        let mut m = SymMatrix::zeros(self.rows);
        for &(j, w) in weights {
            m.add_outer(self.col(j), w);
        }
        m
    }

    /// Keeps the listed columns, in the given order.
    pub fn select_cols(&self, idx: &[usize]) -> Mat {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for &j in idx {
            data.extend_from_slice(self.col(j));
        }
        Mat { rows: self.rows, cols: idx.len(), data }
    }
}

/// Dense symmetric matrix with full row-major storage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    /// Builds from row-major data, validating finiteness and symmetry.
    /// Off-diagonal pairs are averaged so the stored matrix is exactly
    /// symmetric.
    pub fn new(dim: usize, data: &[f64]) -> Result<Self, LinalgError> {
        if data.len() != dim * dim {
            return Err(LinalgError::DimensionMismatch(format!(
                "{dim}x{dim} matrix needs {} entries, got {}",
                dim * dim,
                data.len()
            )));
        }
        for i in 0..dim {
            for j in 0..dim {
                let v = data[i * dim + j];
                if !v.is_finite() {
                    return Err(LinalgError::NonFinite(i, j));
                }
            }
        }
        let mut m = SymMatrix { dim, data: data.to_vec() };
        for i in 0..dim {
            for j in i + 1..dim {
                let a = data[i * dim + j];
                let b = data[j * dim + i];
                if (a - b).abs() > 1e-9 * (1.0 + a.abs().max(b.abs())) {
                    return Err(LinalgError::NotSymmetric(i, j));
                }
                let avg = 0.5 * (a + b);
                m.data[i * dim + j] = avg;
                m.data[j * dim + i] = avg;
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets both `(i,j)` and `(j,i)`.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_major(&self) -> &[f64] {
        &self.data
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self += w · v vᵀ`.
    pub fn add_outer(&mut self, v: &[f64], w: f64) {
        assert_eq!(v.len(), self.dim, "add_outer length mismatch");
        if w == 0.0 {
            return;
        }
        for i in 0..self.dim {
            let wi = w * v[i];
            if wi == 0.0 {
                continue;
            }
            let row = &mut self.data[i * self.dim..(i + 1) * self.dim];
            for (r, vj) in row.iter_mut().zip(v) {
                *r += wi * vj;
            }
        }
    }

    pub fn add_scaled_identity(&mut self, w: f64) {
        for i in 0..self.dim {
            self.data[i * self.dim + i] += w;
        }
    }

    pub fn add_assign(&mut self, other: &SymMatrix) {
        assert_eq!(self.dim, other.dim, "add_assign dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, w: f64) {
        for a in self.data.iter_mut() {
            *a *= w;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "mul_vec length mismatch");
        (0..self.dim).map(|i| dot(self.row(i), x)).collect()
    }

    /// Quadratic form `vᵀ · self · v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        dot(&self.mul_vec(v), v)
    }

    /// Bilinear form `uᵀ · self · v`.
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        dot(&self.mul_vec(v), u)
    }

    /// Principal submatrix indexed by `idx` (sorted or not, no duplicates).
    pub fn principal_submatrix(&self, idx: &[usize]) -> SymMatrix {
        let k = idx.len();
        let mut m = SymMatrix::zeros(k);
        for (p, &i) in idx.iter().enumerate() {
            for (q, &j) in idx.iter().enumerate().skip(p) {
                m.set(p, q, self.get(i, j));
            }
        }
        m
    }

    /// Frobenius distance to another symmetric matrix.
    pub fn frob_dist(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.dim, other.dim, "frob_dist dimension mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = M`.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    dim: usize,
    l: Vec<f64>,
}

/// Cholesky factorization of a symmetric positive definite matrix.
///
/// Fails with [`LinalgError::NotPositiveDefinite`] when a pivot drops to or
/// below `1e-12 · trace(M)/dim`.
///
/// ```
/// use fusionopt::linalg::{cholesky, SymMatrix};
/// let m = SymMatrix::new(2, &[4.0, 2.0, 2.0, 3.0]).unwrap();
/// let f = cholesky(&m).unwrap();
/// assert!((f.logdet() - (4.0f64 * 3.0 - 2.0 * 2.0).ln()).abs() < 1e-12);
/// ```
pub fn cholesky(m: &SymMatrix) -> Result<CholeskyFactor, LinalgError> {
    let n = m.dim();
    let tol = PD_PIVOT_RTOL * m.trace() / n.max(1) as f64;
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut s = m.get(j, j);
        for k in 0..j {
            s -= l[j * n + k] * l[j * n + k];
        }
        if s <= tol {
            return Err(LinalgError::NotPositiveDefinite(j));
        }
        let ljj = s.sqrt();
        l[j * n + j] = ljj;
        for i in j + 1..n {
            let mut t = m.get(i, j);
            for k in 0..j {
                t -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = t / ljj;
        }
    }
    Ok(CholeskyFactor { dim: n, l })
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.l[i * self.dim + j]
    }

    pub fn logdet(&self) -> f64 {
        (0..self.dim).map(|i| 2.0 * self.at(i, i).ln()).sum()
    }

    /// Solves `M x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.dim, "solve length mismatch");
        let n = self.dim;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.at(i, k) * y[k];
            }
            y[i] /= self.at(i, i);
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                y[i] -= self.at(k, i) * y[k];
            }
            y[i] /= self.at(i, i);
        }
        y
    }

    /// Dense inverse `M⁻¹`.
    pub fn inverse(&self) -> SymMatrix {
        let n = self.dim;
        let mut inv = SymMatrix::zeros(n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve(&e);
            e[j] = 0.0;
            for i in j..n {
                inv.set(i, j, col[i]);
            }
        }
        inv
    }

    /// Columns of `Lᵀ`: column `i` holds `(L_{i0}, …, L_{ii}, 0, …)`.
    pub fn upper_factor_cols(&self) -> Mat {
        let n = self.dim;
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            for k in 0..=i {
                m.set(k, i, self.at(i, k));
            }
        }
        m
    }

    /// Columns of `L⁻¹`, so that the returned matrix `U` satisfies
    /// `Uᵀ U = M⁻¹`.
    pub fn inverse_lower_cols(&self) -> Mat {
        let n = self.dim;
        let mut m = Mat::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            // Forward substitution L z = e_j.
            let mut z = e.clone();
            for i in 0..n {
                for k in 0..i {
                    z[i] -= self.at(i, k) * z[k];
                }
                z[i] /= self.at(i, i);
            }
            e[j] = 0.0;
            m.col_mut(j).copy_from_slice(&z);
        }
        m
    }
}

/// `log det M` for symmetric positive definite `M`.
pub fn logdet_spd(m: &SymMatrix) -> Result<f64, LinalgError> {
    cholesky(m).map(|f| f.logdet())
}

/// Eigendecomposition of a symmetric matrix: `M = Q Diag(values) Qᵀ` with
/// eigenvalues sorted in descending order and orthonormal columns in `Q`.
#[derive(Clone, Debug)]
pub struct EigenPair {
    pub values: Vec<f64>,
    pub vectors: Mat,
}

/// Cyclic Jacobi eigendecomposition with threshold sweeps.
///
/// Converges when the off-diagonal Frobenius mass drops below
/// `1e-12 · ‖M‖_F`; fails with [`LinalgError::NoConvergence`] after 64
/// sweeps. The sweep order is fixed, so results are deterministic.
pub fn sym_eig(m: &SymMatrix) -> Result<EigenPair, LinalgError> {
    let n = m.dim();
    if n == 0 {
        return Ok(EigenPair { values: vec![], vectors: Mat::zeros(0, 0) });
    }
    let frob = m.frob_norm();
    let tol = JACOBI_RTOL * frob;
    let mut a = m.clone();
    let mut q = Mat::zeros(n, n);
    for i in 0..n {
        q.set(i, i, 1.0);
    }
    let mut converged = frob == 0.0 || n == 1;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        if converged || off_diag_norm(&a) <= tol {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for r in p + 1..n {
                let apr = a.get(p, r);
                if apr == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let arr = a.get(r, r);
                // Rotation angle choice from the symmetric Schur 2x2 problem.
                let theta = (arr - app) / (2.0 * apr);
                let t = if theta.abs() > 1e150 {
                    1.0 / (2.0 * theta)
                } else {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                apply_jacobi_rotation(&mut a, &mut q, p, r, c, s);
            }
        }
    }
    if !converged && off_diag_norm(&a) > tol {
        return Err(LinalgError::NoConvergence(JACOBI_MAX_SWEEPS));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a.get(j, j)
            .partial_cmp(&a.get(i, i))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let vectors = q.select_cols(&order);
    Ok(EigenPair { values, vectors })
}

fn off_diag_norm(a: &SymMatrix) -> f64 {
    let n = a.dim();
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += 2.0 * a.get(i, j) * a.get(i, j);
        }
    }
    s.sqrt()
}

fn apply_jacobi_rotation(a: &mut SymMatrix, q: &mut Mat, p: usize, r: usize, c: f64, s: f64) {
    let n = a.dim();
    let app = a.get(p, p);
    let arr = a.get(r, r);
    let apr = a.get(p, r);
    a.set(p, p, c * c * app - 2.0 * s * c * apr + s * s * arr);
    a.set(r, r, s * s * app + 2.0 * s * c * apr + c * c * arr);
    a.set(p, r, 0.0);
    for k in 0..n {
        if k == p || k == r {
            continue;
        }
        let akp = a.get(k, p);
        let akr = a.get(k, r);
        a.set(k, p, c * akp - s * akr);
        a.set(k, r, s * akp + c * akr);
    }
    for k in 0..n {
        let qkp = q.get(k, p);
        let qkr = q.get(k, r);
        q.set(k, p, c * qkp - s * qkr);
        q.set(k, r, s * qkp + c * qkr);
    }
}

/// Reconstructs `Q Diag(d) Qᵀ` from an eigenbasis and a value vector.
pub fn from_eigen(vectors: &Mat, values: &[f64]) -> SymMatrix {
    let n = vectors.rows();
    assert_eq!(vectors.cols(), values.len(), "from_eigen length mismatch");
    let mut m = SymMatrix::zeros(n);
    for (j, &v) in values.iter().enumerate() {
        m.add_outer(vectors.col(j), v);
    }
    m
}

/// `M^{-1/2}` for symmetric positive definite `M`, via the eigendecomposition.
///
/// Fails when the spectrum is not safely positive
/// (`λ_min ≤ 1e-12 · λ_max`).
pub fn inv_sqrt_spd(m: &SymMatrix) -> Result<SymMatrix, LinalgError> {
    let eig = sym_eig(m)?;
    let n = m.dim();
    if n == 0 {
        return Ok(SymMatrix::zeros(0));
    }
    let lam_max = eig.values[0];
    let lam_min = eig.values[n - 1];
    if lam_max <= 0.0 || lam_min <= PD_PIVOT_RTOL * lam_max {
        return Err(LinalgError::NotPositiveDefinite(n - 1));
    }
    let inv_sqrt: Vec<f64> = eig.values.iter().map(|v| 1.0 / v.sqrt()).collect();
    Ok(from_eigen(&eig.vectors, &inv_sqrt))
}

/// Direction of a rank-one determinant update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateSign {
    Add,
    Remove,
}

/// Sherman-Morrison update of `(log det M, M⁻¹)` under `M ± b bᵀ`.
///
/// Returns the updated pair. Fails with [`LinalgError::SingularUpdate`] when
/// the update denominator `1 ± bᵀM⁻¹b` falls to `1e-12` or below.
///
/// ```
/// use fusionopt::linalg::{rank_one_logdet_update, SymMatrix, UpdateSign};
/// let inv = SymMatrix::identity(2);
/// let (ld, _) = rank_one_logdet_update(0.0, &inv, &[1.0, 1.0], UpdateSign::Add).unwrap();
/// assert!((ld - 3.0f64.ln()).abs() < 1e-12);
/// ```
pub fn rank_one_logdet_update(
    logdet: f64,
    minv: &SymMatrix,
    b: &[f64],
    sign: UpdateSign,
) -> Result<(f64, SymMatrix), LinalgError> {
    let g = minv.mul_vec(b);
    let c = dot(&g, b);
    let denom = match sign {
        UpdateSign::Add => 1.0 + c,
        UpdateSign::Remove => 1.0 - c,
    };
    if denom <= SM_GUARD {
        return Err(LinalgError::SingularUpdate);
    }
    let mut inv = minv.clone();
    let w = match sign {
        UpdateSign::Add => -1.0 / denom,
        UpdateSign::Remove => 1.0 / denom,
    };
    inv.add_outer(&g, w);
    Ok((logdet + denom.ln(), inv))
}

/// Elementary symmetric polynomial `e_k(y)`.
///
/// `e_0 = 1` and `e_k = 0` for `k > y.len()`. Entries may be negative; the
/// recursion is the standard Newton triangle.
pub fn elem_sym_poly(y: &[f64], k: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > y.len() {
        return 0.0;
    }
    let mut e = vec![0.0; k + 1];
    e[0] = 1.0;
    for &yi in y {
        for j in (1..=k).rev() {
            e[j] += yi * e[j - 1];
        }
    }
    e[k]
}

/// `log e_k(y)` for nonnegative `y`, computed fully in log space so very
/// large or very small products cannot overflow.
///
/// Returns `-inf` when `e_k(y) = 0` (fewer than `k` positive entries).
pub fn log_elem_sym_poly(y: &[f64], k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    if k > y.len() {
        return f64::NEG_INFINITY;
    }
    let mut le = vec![f64::NEG_INFINITY; k + 1];
    le[0] = 0.0;
    for &yi in y {
        debug_assert!(yi >= -1e-12, "log_elem_sym_poly needs nonnegative entries");
        if yi <= 0.0 {
            continue;
        }
        let ly = yi.ln();
        for j in (1..=k).rev() {
            le[j] = log_add_exp(le[j], ly + le[j - 1]);
        }
    }
    le[k]
}

/// Numerically stable `log(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Numerically stable `log(exp(a) - exp(b))` for `a ≥ b`.
/// Returns `-inf` when the difference underflows to zero.
pub fn log_sub_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    debug_assert!(a >= b, "log_sub_exp needs a >= b");
    if a <= b {
        return f64::NEG_INFINITY;
    }
    let d = -(-(a - b)).exp_m1(); // 1 - exp(b - a)
    a + d.ln()
}

/// Sum of all `k×k` principal minors of a symmetric matrix, computed as
/// `e_k` of its eigenvalues.
pub fn sum_principal_minors(m: &SymMatrix, k: usize) -> Result<f64, LinalgError> {
    let eig = sym_eig(m)?;
    Ok(elem_sym_poly(&eig.values, k))
}

/// Pivoted Cholesky factorization of a symmetric positive semidefinite
/// matrix. Returns `F` with `Fᵀ F = M`; rank-deficient inputs yield zero
/// columns past the numerical rank.
///
/// Fails with [`LinalgError::NotPositiveDefinite`] when a pivot is
/// significantly negative.
pub fn psd_factor(m: &SymMatrix) -> Result<Mat, LinalgError> {
    let n = m.dim();
    let tol = PD_PIVOT_RTOL * m.trace().abs().max(m.frob_norm()).max(1.0);
    let mut w = m.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut r = Mat::zeros(n, n); // upper factor of the permuted matrix, row k in r.col-space
    let mut rank = n;
    for k in 0..n {
        let mut piv = k;
        for i in k + 1..n {
            if w.get(i, i) > w.get(piv, piv) {
                piv = i;
            }
        }
        let pval = w.get(piv, piv);
        if pval < -tol {
            return Err(LinalgError::NotPositiveDefinite(k));
        }
        if pval <= tol {
            // All remaining diagonal mass is gone; for a semidefinite input
            // the whole trailing block must be negligible.
            for i in k..n {
                for j in i..n {
                    if w.get(i, j).abs() > 100.0 * tol {
                        return Err(LinalgError::NotPositiveDefinite(k));
                    }
                }
            }
            rank = k;
            break;
        }
        if piv != k {
            swap_sym(&mut w, k, piv);
            perm.swap(k, piv);
            for t in 0..k {
                let a = r.get(t, k);
                let b = r.get(t, piv);
                r.set(t, k, b);
                r.set(t, piv, a);
            }
        }
        let rkk = pval.sqrt();
        r.set(k, k, rkk);
        for j in k + 1..n {
            r.set(k, j, w.get(k, j) / rkk);
        }
        for i in k + 1..n {
            for j in i..n {
                let v = w.get(i, j) - r.get(k, i) * r.get(k, j);
                w.set(i, j, v);
            }
        }
    }
    let _ = rank;
    // Undo the permutation: column perm[j] of F is column j of R.
    let mut f = Mat::zeros(n, n);
    for j in 0..n {
        let src = r.col(j).to_vec();
        f.col_mut(perm[j]).copy_from_slice(&src);
    }
    Ok(f)
}

/// Applies the permutation swapping indices `a` and `b`: `M ← P M Pᵀ`.
fn swap_sym(m: &mut SymMatrix, a: usize, b: usize) {
    if a == b {
        return;
    }
    let n = m.dim();
    for j in 0..n {
        if j == a || j == b {
            continue;
        }
        let x = m.get(a, j);
        let y = m.get(b, j);
        m.set(a, j, y);
        m.set(b, j, x);
    }
    let maa = m.get(a, a);
    let mbb = m.get(b, b);
    m.set(a, a, mbb);
    m.set(b, b, maa);
}

/// Dot product.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use itertools::Itertools;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    pub(crate) fn random_spd(dim: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Mat::zeros(dim, dim);
        for j in 0..dim {
            for i in 0..dim {
                g.set(i, j, rng.sample(StandardNormal));
            }
        }
        let mut m = g.gram();
        m.add_scaled_identity(1.0);
        m
    }

    fn random_sym(dim: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, rng.sample(StandardNormal));
            }
        }
        m
    }

    /// Plain Gaussian-elimination determinant, kept independent of the
    /// factorization code paths it checks.
    fn det_dense(m: &SymMatrix) -> f64 {
        let n = m.dim();
        let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
        let mut det = 1.0;
        for k in 0..n {
            let piv = (k..n).max_by(|&i, &j| {
                a[i][k].abs().partial_cmp(&a[j][k].abs()).unwrap()
            }).unwrap();
            if a[piv][k] == 0.0 {
                return 0.0;
            }
            if piv != k {
                a.swap(piv, k);
                det = -det;
            }
            det *= a[k][k];
            for i in k + 1..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
            }
        }
        det
    }

    #[test]
    fn cholesky_reconstructs_and_logdet_matches_det() {
        for seed in 0..20 {
            let dim = 2 + (seed as usize % 6);
            let m = random_spd(dim, seed);
            let f = cholesky(&m).unwrap();
            assert_abs_diff_eq!(f.logdet(), det_dense(&m).ln(), epsilon = 1e-8);
            let inv = f.inverse();
            let mut prod = SymMatrix::zeros(dim);
            for i in 0..dim {
                let col = inv.mul_vec(m.row(i));
                for j in i..dim {
                    prod.set(i, j, col[j]);
                }
            }
            assert!(prod.frob_dist(&SymMatrix::identity(dim)) < 1e-9);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = SymMatrix::new(2, &[1.0, 2.0, 2.0, 1.0]).unwrap();
        assert_eq!(cholesky(&m).unwrap_err(), LinalgError::NotPositiveDefinite(1));
    }

    #[test]
    fn cholesky_pivot_threshold_is_relative() {
        // Diagonal entries far below 1e-12 of the trace scale trip the guard.
        let m = SymMatrix::new(2, &[1e16, 0.0, 0.0, 1e-3]).unwrap();
        assert!(cholesky(&m).is_err());
        let ok = SymMatrix::new(2, &[1.0, 0.0, 0.0, 1e-3]).unwrap();
        assert!(cholesky(&ok).is_ok());
    }

    #[test]
    fn solve_matches_inverse() {
        let m = random_spd(5, 7);
        let f = cholesky(&m).unwrap();
        let b: Vec<f64> = (0..5).map(|i| i as f64 - 2.0).collect();
        let x = f.solve(&b);
        let back = m.mul_vec(&x);
        for (bi, yi) in b.iter().zip(&back) {
            assert_abs_diff_eq!(bi, yi, epsilon = 1e-9);
        }
    }

    #[test]
    fn eig_reconstructs_orthonormal_sorted() {
        for seed in 0..20 {
            let dim = 2 + (seed as usize % 7);
            let m = random_sym(dim, 100 + seed);
            let eig = sym_eig(&m).unwrap();
            for w in eig.values.windows(2) {
                assert!(w[0] >= w[1]);
            }
            let rec = from_eigen(&eig.vectors, &eig.values);
            assert!(rec.frob_dist(&m) <= 1e-8 * (1.0 + m.frob_norm()));
            for i in 0..dim {
                for j in i..dim {
                    let g = dot(eig.vectors.col(i), eig.vectors.col(j));
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(g, want, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn eig_handles_diagonal_and_identity() {
        let mut m = SymMatrix::zeros(3);
        m.set(0, 0, 3.0);
        m.set(1, 1, -1.0);
        m.set(2, 2, 5.0);
        let eig = sym_eig(&m).unwrap();
        assert_eq!(eig.values, vec![5.0, 3.0, -1.0]);
        let id = SymMatrix::identity(4);
        let eig = sym_eig(&id).unwrap();
        assert_eq!(eig.values, vec![1.0; 4]);
    }

    #[test]
    fn inv_sqrt_squares_back() {
        for seed in 0..10 {
            let dim = 2 + (seed as usize % 5);
            let m = random_spd(dim, 200 + seed);
            let r = inv_sqrt_spd(&m).unwrap();
            // r * m * r should be the identity.
            let mut prod = SymMatrix::zeros(dim);
            for i in 0..dim {
                let v = r.mul_vec(&m.mul_vec(r.row(i)));
                for j in i..dim {
                    prod.set(i, j, v[j]);
                }
            }
            assert!(prod.frob_dist(&SymMatrix::identity(dim)) < 1e-8);
        }
    }

    #[test]
    fn inv_sqrt_rejects_semidefinite() {
        let m = SymMatrix::new(2, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(inv_sqrt_spd(&m), Err(LinalgError::NotPositiveDefinite(_))));
    }

    #[test]
    fn rank_one_update_matches_fresh_factorization() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dim = 5;
        let mut m = SymMatrix::identity(dim);
        let f = cholesky(&m).unwrap();
        let mut ld = f.logdet();
        let mut inv = f.inverse();
        let mut added: Vec<Vec<f64>> = Vec::new();
        for step in 0..50 {
            let remove = !added.is_empty() && step % 3 == 2;
            if remove {
                let b = added.pop().unwrap();
                let (nld, ninv) = rank_one_logdet_update(ld, &inv, &b, UpdateSign::Remove).unwrap();
                ld = nld;
                inv = ninv;
                m.add_outer(&b, -1.0);
            } else {
                let b: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let (nld, ninv) = rank_one_logdet_update(ld, &inv, &b, UpdateSign::Add).unwrap();
                ld = nld;
                inv = ninv;
                m.add_outer(&b, 1.0);
                added.push(b);
            }
        }
        let fresh = cholesky(&m).unwrap();
        assert_abs_diff_eq!(ld, fresh.logdet(), epsilon = 1e-6);
        assert!(inv.frob_dist(&fresh.inverse()) < 1e-6);
    }

    #[test]
    fn rank_one_remove_rejects_singular() {
        let inv = SymMatrix::identity(2);
        let err = rank_one_logdet_update(0.0, &inv, &[1.0, 0.0], UpdateSign::Remove).unwrap_err();
        assert_eq!(err, LinalgError::SingularUpdate);
    }

    #[test]
    fn esp_small_cases() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(elem_sym_poly(&y, 0), 1.0);
        assert_eq!(elem_sym_poly(&y, 1), 6.0);
        assert_eq!(elem_sym_poly(&y, 2), 11.0);
        assert_eq!(elem_sym_poly(&y, 3), 6.0);
        assert_eq!(elem_sym_poly(&y, 4), 0.0);
        assert_abs_diff_eq!(log_elem_sym_poly(&y, 2), 11.0f64.ln(), epsilon = 1e-12);
        assert_eq!(log_elem_sym_poly(&[0.0, 0.0], 1), f64::NEG_INFINITY);
    }

    #[test]
    fn esp_log_space_survives_huge_entries() {
        let y = vec![1e250, 1e250, 1e250];
        let l = log_elem_sym_poly(&y, 2);
        assert_abs_diff_eq!(l, 3.0f64.ln() + 500.0 * 10.0f64.ln(), epsilon = 1e-9);
    }

    #[test]
    fn principal_minor_sums_match_enumeration() {
        for seed in 0..10 {
            let dim = 3 + (seed as usize % 5);
            let m = random_sym(dim, 300 + seed);
            for k in 0..=dim {
                let direct: f64 = (0..dim)
                    .combinations(k)
                    .map(|idx| det_dense(&m.principal_submatrix(&idx)))
                    .sum();
                let via_eig = sum_principal_minors(&m, k).unwrap();
                assert_abs_diff_eq!(via_eig, direct, epsilon = 1e-7 * (1.0 + direct.abs()));
            }
        }
    }

    #[test]
    fn psd_factor_gram_roundtrip() {
        for seed in 0..10 {
            let dim = 4;
            // Rank-deficient PSD: Gram of a 2-column matrix.
            let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
            let mut g = Mat::zeros(2, dim);
            for j in 0..dim {
                for i in 0..2 {
                    g.set(i, j, rng.sample(StandardNormal));
                }
            }
            let mut m = SymMatrix::zeros(dim);
            for i in 0..dim {
                for j in i..dim {
                    m.set(i, j, dot(g.col(i), g.col(j)));
                }
            }
            let f = psd_factor(&m).unwrap();
            let back = f.gram();
            assert!(back.frob_dist(&m) < 1e-9 * (1.0 + m.frob_norm()));
        }
    }

    #[test]
    fn psd_factor_rejects_indefinite() {
        let m = SymMatrix::new(2, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(psd_factor(&m).is_err());
    }

    #[test]
    fn sym_matrix_new_validates() {
        assert!(matches!(
            SymMatrix::new(2, &[1.0, 2.0, 3.0, 4.0]),
            Err(LinalgError::NotSymmetric(0, 1))
        ));
        assert!(matches!(
            SymMatrix::new(2, &[1.0, f64::NAN, f64::NAN, 4.0]),
            Err(LinalgError::NonFinite(0, 1))
        ));
        assert!(matches!(
            SymMatrix::new(2, &[1.0, 2.0, 2.0]),
            Err(LinalgError::DimensionMismatch(_))
        ));
    }

    proptest! {
        #[test]
        fn esp_append_recurrence(
            y in proptest::collection::vec(0.01f64..10.0, 1..8),
            t in 0.01f64..10.0,
            k in 1usize..6
        ) {
            // e_k(y ∪ {t}) = e_k(y) + t e_{k-1}(y)
            let mut yt = y.clone();
            yt.push(t);
            let lhs = elem_sym_poly(&yt, k);
            let rhs = elem_sym_poly(&y, k) + t * elem_sym_poly(&y, k - 1);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }

        #[test]
        fn esp_log_matches_linear(
            y in proptest::collection::vec(0.0f64..5.0, 1..8),
            k in 0usize..6
        ) {
            let lin = elem_sym_poly(&y, k);
            let lg = log_elem_sym_poly(&y, k);
            if lin > 0.0 {
                prop_assert!((lg - lin.ln()).abs() <= 1e-9 * (1.0 + lin.ln().abs()));
            } else {
                prop_assert_eq!(lg, f64::NEG_INFINITY);
            }
        }
    }
}
