//! Problem container and instance plumbing.
//!
//! A problem is a triple `(C, A, s)`: a positive definite `d×d` information
//! matrix `C`, a `d×n` candidate matrix `A` whose columns are the rank-one
//! data directions, and a budget `s`. Selecting `S ⊆ [n]` with `|S| = s`
//! yields the objective `log det(C + Σ_{i∈S} a_i a_iᵀ)`.
//!
//! [`DdfInstance::build`] precomputes every derived factorization the solver
//! layers need: whitened candidates `b_i = C^{-1/2} a_i`, the factor columns
//! `v_i` of `I + BᵀB` and their complement-space counterparts, and the
//! saturated-direction columns `q_i = (C + AAᵀ)^{-1/2} a_i`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{
    cholesky, dot, inv_sqrt_spd, psd_factor, sym_eig, LinalgError, Mat, SymMatrix,
};

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("information matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("bad dimensions: {0}")]
    BadDimensions(String),
    #[error("budget s={s} outside 1..={n}")]
    BadBudget { s: usize, n: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("numerical invariant violated: {0}")]
    Numerical(String),
}

/// A feasible subset together with its objective value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Sorted, duplicate-free candidate indices.
    pub indices: Vec<usize>,
    /// `log det(C + Σ_{i∈indices} a_i a_iᵀ)`.
    pub objective: f64,
}

impl Selection {
    pub fn new(inst: &DdfInstance, mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        let objective = inst.objective(&indices);
        Selection { indices, objective }
    }
}

/// Problem data plus derived factorizations.
#[derive(Clone, Debug)]
pub struct DdfInstance {
    d: usize,
    n: usize,
    s: usize,
    c: SymMatrix,
    a: Mat,
    b: Mat,
    gram_b: SymMatrix,
    v: Mat,
    vc: Mat,
    q: Mat,
    logdet_c: f64,
    logdet_c_plus: f64,
    sigma_max: f64,
    delta: f64,
}

impl DdfInstance {
    /// Validates `(C, A, s)` and precomputes all derived data.
    ///
    /// ```
    /// use fusionopt::linalg::{Mat, SymMatrix};
    /// use fusionopt::DdfInstance;
    /// let c = SymMatrix::new(2, &[2.0, 0.0, 0.0, 2.0]).unwrap();
    /// let a = Mat::from_row_major(2, 2, &[50.0, 0.0, 0.0, 50.0]).unwrap();
    /// let inst = DdfInstance::build(c, a, 1).unwrap();
    /// assert!((inst.sigma_max() - 1250.0).abs() < 1e-9);
    /// ```
    pub fn build(c: SymMatrix, a: Mat, s: usize) -> Result<Self, InstanceError> {
        let d = c.dim();
        let n = a.cols();
        if d == 0 || n == 0 {
            return Err(InstanceError::BadDimensions(
                "both d and n must be at least 1".into(),
            ));
        }
        if a.rows() != d {
            return Err(InstanceError::BadDimensions(format!(
                "candidate matrix is {}x{}, expected row count {d}",
                a.rows(),
                a.cols()
            )));
        }
        if s < 1 || s > n {
            return Err(InstanceError::BadBudget { s, n });
        }
        let c_factor = cholesky(&c).map_err(|_| InstanceError::NotPositiveDefinite)?;
        let logdet_c = c_factor.logdet();
        let c_inv_sqrt =
            inv_sqrt_spd(&c).map_err(|_| InstanceError::NotPositiveDefinite)?;
        let b = sym_mul_mat(&c_inv_sqrt, &a);
        let gram_b = b.gram();

        // Whitening consistency: BᵀB must reproduce Aᵀ C⁻¹ A.
        let mut gram_err: f64 = 0.0;
        for i in 0..n {
            let ci = c_factor.solve(a.col(i));
            for j in i..n {
                gram_err = gram_err.max((gram_b.get(i, j) - dot(&ci, a.col(j))).abs());
            }
        }
        let scale = 1.0 + gram_b.frob_norm();
        if gram_err > 1e-8 * scale {
            return Err(InstanceError::Numerical(format!(
                "whitened Gram drifted {gram_err:.3e} from direct computation"
            )));
        }

        let mut m = gram_b.clone();
        m.add_scaled_identity(1.0);
        let m_factor = cholesky(&m)
            .map_err(|e| InstanceError::Numerical(format!("factor of I + BᵀB failed: {e}")))?;
        let v = m_factor.upper_factor_cols();
        let vc = m_factor.inverse_lower_cols();

        let mut c_plus = c.clone();
        for i in 0..n {
            c_plus.add_outer(a.col(i), 1.0);
        }
        let plus_factor = cholesky(&c_plus)
            .map_err(|e| InstanceError::Numerical(format!("factor of C + AAᵀ failed: {e}")))?;
        let logdet_c_plus = plus_factor.logdet();
        let plus_inv_sqrt = inv_sqrt_spd(&c_plus)
            .map_err(|e| InstanceError::Numerical(format!("inverse root of C + AAᵀ: {e}")))?;
        let q = sym_mul_mat(&plus_inv_sqrt, &a);

        // The saturated directions always sit strictly inside the unit ball.
        let mut qq = SymMatrix::zeros(d);
        for i in 0..n {
            qq.add_outer(q.col(i), 1.0);
        }
        let qq_eig = sym_eig(&qq)?;
        if qq_eig.values[0] >= 1.0 - 1e-10 {
            return Err(InstanceError::Numerical(format!(
                "saturated direction mass reached {:.17}",
                qq_eig.values[0]
            )));
        }

        let sigma_max = (0..n)
            .map(|i| dot(b.col(i), b.col(i)))
            .fold(0.0f64, f64::max);
        let delta = sym_eig(&gram_b)?.values.first().copied().unwrap_or(0.0).max(0.0);

        Ok(DdfInstance {
            d,
            n,
            s,
            c,
            a,
            b,
            gram_b,
            v,
            vc,
            q,
            logdet_c,
            logdet_c_plus,
            sigma_max,
            delta,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Selection budget.
    pub fn s(&self) -> usize {
        self.s
    }

    /// Returns a copy of the instance with a different budget.
    pub fn with_budget(&self, s: usize) -> Result<Self, InstanceError> {
        if s < 1 || s > self.n {
            return Err(InstanceError::BadBudget { s, n: self.n });
        }
        let mut inst = self.clone();
        inst.s = s;
        Ok(inst)
    }

    pub fn c(&self) -> &SymMatrix {
        &self.c
    }

    /// Candidate column `a_i`.
    pub fn a_col(&self, i: usize) -> &[f64] {
        self.a.col(i)
    }

    /// Whitened candidate `b_i = C^{-1/2} a_i`.
    pub fn b_col(&self, i: usize) -> &[f64] {
        self.b.col(i)
    }

    /// Factor column `v_i` with `v_iᵀ v_j = (I + BᵀB)_{ij}`.
    pub fn v_col(&self, i: usize) -> &[f64] {
        self.v.col(i)
    }

    /// Complement factor column `u_i` with `u_iᵀ u_j = ((I + BᵀB)^{-1})_{ij}`.
    pub fn vc_col(&self, i: usize) -> &[f64] {
        self.vc.col(i)
    }

    /// Saturated direction `q_i = (C + AAᵀ)^{-1/2} a_i`.
    pub fn q_col(&self, i: usize) -> &[f64] {
        self.q.col(i)
    }

    /// Gram matrix `BᵀB`.
    pub fn gram_b(&self) -> &SymMatrix {
        &self.gram_b
    }

    pub fn logdet_c(&self) -> f64 {
        self.logdet_c
    }

    /// `log det(C + AAᵀ)`, the everything-selected objective.
    pub fn logdet_c_plus(&self) -> f64 {
        self.logdet_c_plus
    }

    /// `max_i a_iᵀ C⁻¹ a_i`.
    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    /// `λ_max(BᵀB)`; the relaxation Hessian is bounded below by `-δ²·I`.
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `log det(C + Σ_{i∈S} a_i a_iᵀ)` for any `S ⊆ [n]`, not only budget-
    /// sized ones.
    ///
    /// ```
    /// use fusionopt::linalg::{Mat, SymMatrix};
    /// use fusionopt::DdfInstance;
    /// let c = SymMatrix::identity(2);
    /// let a = Mat::from_row_major(2, 1, &[1.0, 1.0]).unwrap();
    /// let inst = DdfInstance::build(c, a, 1).unwrap();
    /// assert!((inst.objective(&[0]) - 3.0f64.ln()).abs() < 1e-12);
    /// ```
    pub fn objective(&self, indices: &[usize]) -> f64 {
        let mut fused = self.c.clone();
        for &i in indices {
            assert!(i < self.n, "candidate index {i} out of range");
            fused.add_outer(self.a.col(i), 1.0);
        }
        cholesky(&fused)
            .expect("fused information matrix stays positive definite")
            .logdet()
    }

    /// Same objective through the small-subset identity
    /// `log det C + log det(I_{|S|} + (BᵀB)_{S,S})`.
    pub fn objective_via_submatrix(&self, indices: &[usize]) -> f64 {
        let mut m = self.gram_b.principal_submatrix(indices);
        m.add_scaled_identity(1.0);
        self.logdet_c
            + cholesky(&m)
                .expect("shifted Gram submatrix stays positive definite")
                .logdet()
    }

    /// Complement view of the objective around the fully-fused matrix.
    pub fn complement_r(&self) -> ComplementR<'_> {
        ComplementR { inst: self }
    }

    /// Non-fatal observations about the data, currently zero candidate
    /// columns that can never contribute.
    pub fn validation_notes(&self) -> Vec<String> {
        let mut notes = Vec::new();
        for i in 0..self.n {
            if self.a.col(i).iter().all(|&x| x == 0.0) {
                notes.push(format!("candidate column {i} is identically zero"));
            }
        }
        notes
    }
}

/// Complement-space view: the objective of selecting `S` equals the
/// fully-fused log-determinant minus the mass of the rejected directions.
pub struct ComplementR<'a> {
    inst: &'a DdfInstance,
}

impl ComplementR<'_> {
    /// `log det(C + AAᵀ) + log det(I_d - Σ_{i∈excluded} q_i q_iᵀ)`.
    ///
    /// Equals `objective(S)` when `excluded = [n] \ S`.
    pub fn objective_excluding(&self, excluded: &[usize]) -> f64 {
        let mut m = SymMatrix::identity(self.inst.d);
        for &i in excluded {
            m.add_outer(self.inst.q.col(i), -1.0);
        }
        self.inst.logdet_c_plus
            + cholesky(&m)
                .expect("excluded-direction matrix stays positive definite")
                .logdet()
    }
}

/// `sym * mat`, column by column.
fn sym_mul_mat(sym: &SymMatrix, mat: &Mat) -> Mat {
    let cols: Vec<Vec<f64>> = (0..mat.cols()).map(|j| sym.mul_vec(mat.col(j))).collect();
    Mat::from_cols(mat.rows(), &cols).expect("columns share the symmetric dimension")
}

// ── Reductions ──────────────────────────────────────────────────────────────

/// Reduction from a principal-submatrix entropy problem on a positive
/// definite `C_e` to an equivalent fusion instance, plus the constant
/// `offset` with
/// `log det (C_e)_{S,S} = instance objective(S) + offset` for every `|S| = s`.
///
/// ```
/// use fusionopt::linalg::SymMatrix;
/// use fusionopt::instance::from_entropy;
/// let c = SymMatrix::new(2, &[2.0, 0.0, 0.0, 3.0]).unwrap();
/// let (inst, offset) = from_entropy(&c, 1).unwrap();
/// let reduced = inst.objective(&[1]) + offset;
/// assert!((reduced - 3.0f64.ln()).abs() < 1e-9);
/// ```
pub fn from_entropy(c_e: &SymMatrix, s: usize) -> Result<(DdfInstance, f64), InstanceError> {
    let n = c_e.dim();
    if n == 0 {
        return Err(InstanceError::BadDimensions("entropy matrix is empty".into()));
    }
    if s < 1 || s > n {
        return Err(InstanceError::BadBudget { s, n });
    }
    let eig = sym_eig(c_e)?;
    let lam_min = eig.values[n - 1];
    if lam_min <= 0.0 || lam_min <= 1e-12 * eig.values[0] {
        return Err(InstanceError::NotPositiveDefinite);
    }
    let mut shifted = c_e.clone();
    shifted.scale(1.0 / lam_min);
    shifted.add_scaled_identity(-1.0);
    let f = psd_factor(&shifted)?;
    let inst = DdfInstance::build(SymMatrix::identity(n), f, s)?;
    Ok((inst, (s as f64) * lam_min.ln()))
}

/// The reverse direction: any fusion instance maps onto a principal-
/// submatrix entropy problem on `I_n + BᵀB` with constant `log det C`, so
/// `objective(S) = log det C + log det (I_n + BᵀB)_{S,S}`.
pub fn to_entropy(inst: &DdfInstance) -> (SymMatrix, f64) {
    let mut m = inst.gram_b.clone();
    m.add_scaled_identity(1.0);
    (m, inst.logdet_c)
}

// ── Generators ──────────────────────────────────────────────────────────────

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Seeded random instance: `C = GᵀG + I_d` with standard normal `G`, and
/// standard normal candidates. Identical seeds give bitwise-identical
/// instances.
pub fn gen_random(d: usize, n: usize, s: usize, seed: u64) -> Result<DdfInstance, InstanceError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Mat::zeros(d, d);
    for j in 0..d {
        for i in 0..d {
            g.set(i, j, rng.sample(StandardNormal));
        }
    }
    let mut c = g.gram();
    c.add_scaled_identity(1.0);
    let mut a = Mat::zeros(d, n);
    for j in 0..n {
        for i in 0..d {
            a.set(i, j, rng.sample(StandardNormal));
        }
    }
    DdfInstance::build(c, a, s)
}

/// Sensor-placement style instance: candidate `i` measures coordinate `i`
/// with noise standard deviation `sigma[i]`, so `a_i = e_i / sigma[i]` and
/// `d = n = dim(C)`.
pub fn gen_pmu(c: SymMatrix, sigma: &[f64], s: usize) -> Result<DdfInstance, InstanceError> {
    let n = c.dim();
    if sigma.len() != n {
        return Err(InstanceError::BadDimensions(format!(
            "{} noise entries for a {n}-bus matrix",
            sigma.len()
        )));
    }
    if let Some(i) = sigma.iter().position(|&v| !(v.is_finite() && v > 0.0)) {
        return Err(InstanceError::BadDimensions(format!(
            "noise standard deviation at position {i} must be positive"
        )));
    }
    let mut a = Mat::zeros(n, n);
    for i in 0..n {
        a.set(i, i, 1.0 / sigma[i]);
    }
    DdfInstance::build(c, a, s)
}

// ── File round-tripping ─────────────────────────────────────────────────────

/// On-disk matrix payload: either inline row-major values or a reference to
/// a headerless comma-separated file, resolved relative to the instance
/// file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSource {
    Inline(Vec<f64>),
    Csv { csv: String },
}

/// Serialized instance schema.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceFile {
    pub d: usize,
    pub n: usize,
    pub s: usize,
    #[serde(rename = "C")]
    pub c: MatrixSource,
    #[serde(rename = "A")]
    pub a: MatrixSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

/// Writes the instance as JSON with inline row-major matrices. Numbers are
/// serialized with shortest round-trip decimal form, so `save` followed by
/// [`load`] reproduces the instance bit for bit.
pub fn save(inst: &DdfInstance, path: &Path) -> Result<(), InstanceError> {
    save_with_meta(inst, path, None)
}

pub fn save_with_meta(
    inst: &DdfInstance,
    path: &Path,
    meta: Option<serde_json::Value>,
) -> Result<(), InstanceError> {
    let file = InstanceFile {
        d: inst.d,
        n: inst.n,
        s: inst.s,
        c: MatrixSource::Inline(inst.c.row_major().to_vec()),
        a: MatrixSource::Inline(inst.a.row_major()),
        meta,
    };
    let body = serde_json::to_string_pretty(&file)
        .map_err(|e| InstanceError::Parse(e.to_string()))?;
    std::fs::write(path, body).map_err(|source| InstanceError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads an instance file, resolving CSV matrix references relative to the
/// file's directory.
pub fn load(path: &Path) -> Result<DdfInstance, InstanceError> {
    let body = std::fs::read_to_string(path).map_err(|source| InstanceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: InstanceFile =
        serde_json::from_str(&body).map_err(|e| InstanceError::Parse(e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let c_raw = resolve_matrix(&file.c, file.d, file.d, base, "C")?;
    let a_raw = resolve_matrix(&file.a, file.d, file.n, base, "A")?;
    let c = SymMatrix::new(file.d, &c_raw)?;
    let a = Mat::from_row_major(file.d, file.n, &a_raw)?;
    DdfInstance::build(c, a, file.s)
}

fn resolve_matrix(
    src: &MatrixSource,
    rows: usize,
    cols: usize,
    base: &Path,
    name: &str,
) -> Result<Vec<f64>, InstanceError> {
    match src {
        MatrixSource::Inline(values) => {
            if values.len() != rows * cols {
                return Err(InstanceError::DimensionMismatch(format!(
                    "matrix {name} has {} entries, expected {rows}x{cols}",
                    values.len()
                )));
            }
            Ok(values.clone())
        }
        MatrixSource::Csv { csv } => {
            let (r, c, values) = read_matrix_csv(&base.join(csv))?;
            if r != rows || c != cols {
                return Err(InstanceError::DimensionMismatch(format!(
                    "matrix {name} in {csv} is {r}x{c}, expected {rows}x{cols}"
                )));
            }
            Ok(values)
        }
    }
}

/// Reads a headerless comma-separated numeric matrix; one row per line.
pub fn read_matrix_csv(path: &Path) -> Result<(usize, usize, Vec<f64>), InstanceError> {
    let body = std::fs::read_to_string(path).map_err(|source| InstanceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Result<Vec<f64>, _> = line
            .split(',')
            .map(|tok| tok.trim().parse::<f64>())
            .collect();
        let row = row.map_err(|e| {
            InstanceError::Parse(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        match cols {
            None => cols = Some(row.len()),
            Some(c) if c != row.len() => {
                return Err(InstanceError::Parse(format!(
                    "{}:{}: ragged row of length {} (expected {c})",
                    path.display(),
                    lineno + 1,
                    row.len()
                )))
            }
            _ => {}
        }
        values.extend(row);
        rows += 1;
    }
    if rows == 0 {
        return Err(InstanceError::Parse(format!(
            "{}: no rows found",
            path.display()
        )));
    }
    Ok((rows, cols.unwrap_or(0), values))
}

/// Writes a row-major matrix as headerless comma-separated lines with
/// shortest round-trip decimal formatting.
pub fn write_matrix_csv(
    path: &Path,
    rows: usize,
    cols: usize,
    values: &[f64],
) -> Result<(), InstanceError> {
    assert_eq!(values.len(), rows * cols, "write_matrix_csv size mismatch");
    let mut out = String::new();
    for i in 0..rows {
        let row: Vec<String> = (0..cols).map(|j| format!("{}", values[i * cols + j])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| InstanceError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use itertools::Itertools;

    #[test]
    fn build_derives_consistent_data() {
        let inst = gen_random(3, 6, 2, 42).unwrap();
        // b_i = C^{-1/2} a_i means bᵀb = aᵀ C⁻¹ a.
        let f = cholesky(inst.c()).unwrap();
        for i in 0..inst.n() {
            let direct = dot(&f.solve(inst.a_col(i)), inst.a_col(i));
            assert_abs_diff_eq!(dot(inst.b_col(i), inst.b_col(i)), direct, epsilon = 1e-8);
        }
        // v_iᵀ v_j reproduces I + BᵀB, and the complement factor its inverse.
        let mut m = inst.gram_b().clone();
        m.add_scaled_identity(1.0);
        let minv = cholesky(&m).unwrap().inverse();
        for i in 0..inst.n() {
            for j in 0..inst.n() {
                assert_abs_diff_eq!(
                    dot(inst.v_col(i), inst.v_col(j)),
                    m.get(i, j),
                    epsilon = 1e-8
                );
                assert_abs_diff_eq!(
                    dot(inst.vc_col(i), inst.vc_col(j)),
                    minv.get(i, j),
                    epsilon = 1e-8
                );
            }
        }
    }

    #[test]
    fn build_rejects_bad_inputs() {
        let c = SymMatrix::new(2, &[1.0, 2.0, 2.0, 1.0]).unwrap();
        let a = Mat::zeros(2, 3);
        assert!(matches!(
            DdfInstance::build(c, a, 1),
            Err(InstanceError::NotPositiveDefinite)
        ));
        let c = SymMatrix::identity(2);
        assert!(matches!(
            DdfInstance::build(c.clone(), Mat::zeros(3, 2), 1),
            Err(InstanceError::BadDimensions(_))
        ));
        assert!(matches!(
            DdfInstance::build(c.clone(), Mat::zeros(2, 3), 0),
            Err(InstanceError::BadBudget { s: 0, n: 3 })
        ));
        assert!(matches!(
            DdfInstance::build(c, Mat::zeros(2, 3), 4),
            Err(InstanceError::BadBudget { s: 4, n: 3 })
        ));
    }

    #[test]
    fn objective_paths_agree() {
        let inst = gen_random(4, 7, 3, 7).unwrap();
        for k in 0..=4usize {
            for idx in (0..inst.n()).combinations(k) {
                let dense = inst.objective(&idx);
                let small = inst.objective_via_submatrix(&idx);
                assert_abs_diff_eq!(dense, small, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn complement_identity_holds_for_all_subsets() {
        let inst = gen_random(3, 6, 2, 99).unwrap();
        let comp = inst.complement_r();
        for s_set in (0..inst.n()).combinations(inst.s()) {
            let excluded: Vec<usize> =
                (0..inst.n()).filter(|i| !s_set.contains(i)).collect();
            assert_abs_diff_eq!(
                inst.objective(&s_set),
                comp.objective_excluding(&excluded),
                epsilon = 1e-7
            );
        }
    }

    #[test]
    fn entropy_roundtrip_diag_example() {
        let c = SymMatrix::new(2, &[2.0, 0.0, 0.0, 3.0]).unwrap();
        let (inst, offset) = from_entropy(&c, 1).unwrap();
        let via = [0, 1]
            .iter()
            .map(|&i| inst.objective(&[i]) + offset)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_abs_diff_eq!(via, 3.0f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(
            inst.objective(&[1]) + offset,
            1.5f64.ln() + 2.0f64.ln(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn entropy_reduction_matches_submatrix_logdet() {
        let base = gen_random(4, 6, 3, 5).unwrap();
        let (c_e, _) = to_entropy(&base);
        let s = 3;
        let (inst, offset) = from_entropy(&c_e, s).unwrap();
        for s_set in (0..c_e.dim()).combinations(s) {
            let direct = cholesky(&c_e.principal_submatrix(&s_set)).unwrap().logdet();
            let reduced = inst.objective(&s_set) + offset;
            assert_abs_diff_eq!(direct, reduced, epsilon = 1e-7);
        }
    }

    #[test]
    fn to_entropy_identity_all_subsets() {
        let inst = gen_random(3, 6, 2, 17).unwrap();
        let (c_e, constant) = to_entropy(&inst);
        for s_set in (0..inst.n()).powerset() {
            if s_set.is_empty() {
                continue;
            }
            let direct = inst.objective(&s_set);
            let via = constant + cholesky(&c_e.principal_submatrix(&s_set)).unwrap().logdet();
            assert_abs_diff_eq!(direct, via, epsilon = 1e-7);
        }
    }

    #[test]
    fn gen_random_is_deterministic() {
        let a = gen_random(3, 5, 2, 123).unwrap();
        let b = gen_random(3, 5, 2, 123).unwrap();
        assert_eq!(a.c().row_major(), b.c().row_major());
        assert_eq!(a.a.row_major(), b.a.row_major());
        let c = gen_random(3, 5, 2, 124).unwrap();
        assert_ne!(a.a.row_major(), c.a.row_major());
    }

    #[test]
    fn gen_pmu_diag_argmax() {
        let c = SymMatrix::new(3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 4.0]).unwrap();
        let inst = gen_pmu(c, &[1.0, 1.0, 1.0], 1).unwrap();
        let vals: Vec<f64> = (0..3).map(|i| inst.objective(&[i])).collect();
        // log(1 + 1/C_ii) on top of log det C favors the smallest diagonal.
        assert!(vals[0] >= vals[2] && vals[1] >= vals[2]);
        assert_abs_diff_eq!(vals[0], 4.0f64.ln() + 2.0f64.ln(), epsilon = 1e-9);
        assert!(gen_pmu(SymMatrix::identity(2), &[0.02, -1.0], 1).is_err());
        assert!(gen_pmu(SymMatrix::identity(2), &[0.02], 1).is_err());
    }

    #[test]
    fn save_load_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("inst.json");
        let inst = gen_random(3, 5, 2, 2024).unwrap();
        save(&inst, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(inst.c().row_major(), back.c().row_major());
        assert_eq!(inst.a.row_major(), back.a.row_major());
        assert_eq!(inst.s(), back.s());
        // Second hop stays identical too.
        let path2 = dir.path().join("inst2.json");
        save(&back, &path2).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            std::fs::read_to_string(&path2).unwrap()
        );
    }

    #[test]
    fn load_resolves_csv_references() {
        let dir = tempfile::tempdir().unwrap();
        let inst = gen_random(2, 4, 2, 88).unwrap();
        write_matrix_csv(&dir.path().join("c.csv"), 2, 2, inst.c().row_major()).unwrap();
        write_matrix_csv(&dir.path().join("a.csv"), 2, 4, &inst.a.row_major()).unwrap();
        let body = serde_json::json!({
            "d": 2, "n": 4, "s": 2,
            "C": {"csv": "c.csv"},
            "A": {"csv": "a.csv"},
        });
        let path = dir.path().join("inst.json");
        std::fs::write(&path, serde_json::to_string(&body).unwrap()).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.c().row_major(), inst.c().row_major());
        assert_eq!(back.a.row_major(), inst.a.row_major());
    }

    #[test]
    fn load_reports_parse_and_shape_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{not json").unwrap();
        assert!(matches!(load(&path), Err(InstanceError::Parse(_))));
        let body = serde_json::json!({
            "d": 2, "n": 2, "s": 1,
            "C": [1.0, 0.0, 0.0],
            "A": [1.0, 0.0, 0.0, 1.0],
        });
        std::fs::write(&path, serde_json::to_string(&body).unwrap()).unwrap();
        assert!(matches!(load(&path), Err(InstanceError::DimensionMismatch(_))));
    }

    #[test]
    fn zero_columns_are_flagged_not_fatal() {
        let c = SymMatrix::identity(2);
        let mut a = Mat::zeros(2, 3);
        a.set(0, 0, 1.0);
        a.set(1, 2, 2.0);
        let inst = DdfInstance::build(c, a, 1).unwrap();
        let notes = inst.validation_notes();
        assert_eq!(notes.len(), 1);
        assert!(notes[0].contains("column 1"));
    }
}
