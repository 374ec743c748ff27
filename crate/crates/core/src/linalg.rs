//! Dense linear algebra used by every certificate: orthogonal projections,
//! positive-semidefiniteness tests, joint diagonalization of commuting
//! symmetric matrices and simultaneous SVD of matrix pairs.
//!
//! Matrices are `nalgebra::DMatrix<f64>`. All routines are pure.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Seed for the random weights used by [`simultaneous_diagonalize_symmetric`].
const JOINT_DIAG_SEED: u64 = 0x6a6f_696e_7464_6961;
const JOINT_DIAG_ATTEMPTS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("column {column} is linearly dependent on the preceding columns")]
    RankDeficient { column: usize },
    #[error("columns are not orthonormal: Gram residual {residual:.3e}")]
    NotOrthonormal { residual: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix {index} is not symmetric: residual {residual:.3e}")]
    NotSymmetric { index: usize, residual: f64 },
    #[error("matrices {first} and {second} do not commute: commutator norm {residual:.3e}")]
    NotCommuting {
        first: usize,
        second: usize,
        residual: f64,
    },
    #[error("joint diagonalization failed after {attempts} attempts: off-diagonal residual {residual:.3e}")]
    JointDiagonalization { attempts: usize, residual: f64 },
    #[error("A^T B or A B^T is not symmetric (residual {residual:.3e}); no shared singular vectors exist")]
    IncompatiblePair { residual: f64 },
    #[error("shared singular subspaces could not be aligned: reconstruction residual {residual:.3e}")]
    Alignment { residual: f64 },
    #[error("matrix is singular: smallest singular value {smallest:.3e}")]
    Singular { smallest: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("non-finite entry")]
    NonFinite,
    #[error("empty input")]
    Empty,
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Central tolerances. `abs_tol` bounds residuals of identities that should
/// hold exactly, `rel_tol` is used where a quantity is compared against its
/// own magnitude, and `psd_eig_tol` is the slack on minimum eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub psd_eig_tol: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-9,
            rel_tol: 1e-6,
            psd_eig_tol: 1e-9,
        }
    }
}

impl ToleranceConfig {
    pub fn new(abs_tol: f64, rel_tol: f64, psd_eig_tol: f64) -> std::result::Result<Self, String> {
        let cfg = Self {
            abs_tol,
            rel_tol,
            psd_eig_tol,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, v) in [
            ("abs_tol", self.abs_tol),
            ("rel_tol", self.rel_tol),
            ("psd_eig_tol", self.psd_eig_tol),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be strictly positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// `max(1, x)`: tolerances are absolute for small quantities and relative for large ones.
#[inline]
pub(crate) fn scale(x: f64) -> f64 {
    x.abs().max(1.0)
}

pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(LinalgError::DimensionMismatch("ragged rows".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|x| !x.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    Ok(Matrix::from_row_slice(nrows, ncols, &flat))
}

pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn ensure_finite(m: &Matrix) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite)
    }
}

fn ensure_square(m: &Matrix) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(LinalgError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        })
    }
}

/// `‖QᵀQ − I‖_F`.
pub fn gram_residual(q: &Matrix) -> f64 {
    let k = q.ncols();
    (q.transpose() * q - Matrix::identity(k, k)).norm()
}

/// Modified Gram-Schmidt with one re-orthogonalization pass.
pub fn orthonormalize(cols: &Matrix) -> Result<Matrix> {
    ensure_finite(cols)?;
    let (n, k) = cols.shape();
    let mut q = Matrix::zeros(n, k);
    for j in 0..k {
        let original = cols.column(j).norm();
        let mut v: Vector = cols.column(j).into_owned();
        for _ in 0..2 {
            for i in 0..j {
                let qi = q.column(i);
                let c = qi.dot(&v);
                v.axpy(-c, &qi, 1.0);
            }
        }
        let norm = v.norm();
        if original == 0.0 || norm <= 1e-10 * original {
            return Err(LinalgError::RankDeficient { column: j });
        }
        q.set_column(j, &(v / norm));
    }
    Ok(q)
}

/// Extends the orthonormal columns of `q` (n×k) to an n×n orthogonal matrix.
pub fn complete_orthonormal_basis(q: &Matrix) -> Matrix {
    let (n, k) = q.shape();
    if n == 0 {
        return Matrix::zeros(0, 0);
    }
    let mut cols: Vec<Vector> = (0..k).map(|j| q.column(j).into_owned()).collect();
    while cols.len() < n {
        // Pick the standard basis vector with the largest residual.
        let mut best: Option<(f64, Vector)> = None;
        for i in 0..n {
            let mut v = Vector::zeros(n);
            v[i] = 1.0;
            for _ in 0..2 {
                for c in &cols {
                    let d = c.dot(&v);
                    v.axpy(-d, c, 1.0);
                }
            }
            let norm = v.norm();
            if best.as_ref().is_none_or(|(b, _)| norm > *b) {
                best = Some((norm, v));
            }
        }
        let (norm, v) = best.expect("n > 0 when a column is missing");
        cols.push(v / norm);
    }
    Matrix::from_columns(&cols)
}

/// Flips column signs so the first entry with magnitude above `1e-12` is positive.
/// Returns the applied signs.
pub(crate) fn canonical_column_signs(m: &mut Matrix) -> Vec<f64> {
    let mut signs = Vec::with_capacity(m.ncols());
    for j in 0..m.ncols() {
        let lead = m.column(j).iter().copied().find(|x| x.abs() > 1e-12);
        let s = if lead.is_some_and(|x| x < 0.0) { -1.0 } else { 1.0 };
        if s < 0.0 {
            m.column_mut(j).neg_mut();
        }
        signs.push(s);
    }
    signs
}

/// Orthogonal projection `π = PPᵀ` onto the span of orthonormal columns `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    basis: Matrix,
    matrix: Matrix,
}

impl Projection {
    /// Builds `π = PPᵀ`, rejecting bases whose Gram residual exceeds `tol`.
    pub fn from_basis(basis: Matrix, tol: f64) -> Result<Self> {
        ensure_finite(&basis)?;
        let residual = gram_residual(&basis);
        if residual > tol {
            return Err(LinalgError::NotOrthonormal { residual });
        }
        let matrix = &basis * basis.transpose();
        Ok(Self { basis, matrix })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            basis: Matrix::identity(dim, dim),
            matrix: Matrix::identity(dim, dim),
        }
    }

    /// Projection onto the coordinates `start..end` of `R^dim`.
    pub fn coordinate_block(dim: usize, start: usize, end: usize) -> Self {
        let mut basis = Matrix::zeros(dim, end - start);
        for (j, i) in (start..end).enumerate() {
            basis[(i, j)] = 1.0;
        }
        let matrix = &basis * basis.transpose();
        Self { basis, matrix }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn apply(&self, v: &Vector) -> Vector {
        &self.basis * (self.basis.transpose() * v)
    }

    /// `(‖π² − π‖_F, ‖π − πᵀ‖_F)`.
    pub fn residuals(&self) -> (f64, f64) {
        projection_residuals(&self.matrix)
    }
}

/// Idempotence and self-adjointness residuals of an arbitrary square matrix.
pub fn projection_residuals(m: &Matrix) -> (f64, f64) {
    ((m * m - m).norm(), (m - m.transpose()).norm())
}

pub fn make_projection(basis: &Matrix, tol: f64) -> Result<Projection> {
    Projection::from_basis(basis.clone(), tol)
}

pub fn projections_commute(a: &Projection, b: &Projection, tol: f64) -> Result<bool> {
    if a.dim() != b.dim() {
        return Err(LinalgError::DimensionMismatch(format!(
            "projections act on R^{} and R^{}",
            a.dim(),
            b.dim()
        )));
    }
    let (pa, pb) = (a.matrix(), b.matrix());
    Ok((pa * pb - pb * pa).norm() <= tol)
}

/// Splits a square matrix into its symmetric and antisymmetric parts.
pub fn sym_antisym_split(m: &Matrix) -> Result<(Matrix, Matrix)> {
    ensure_square(m)?;
    let t = m.transpose();
    Ok(((m + &t) * 0.5, (m - &t) * 0.5))
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted descending.
pub fn symmetric_eigen_sorted(m: &Matrix) -> (Vector, Matrix) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = Matrix::from_columns(
        &order
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    (values, vectors)
}

pub fn min_symmetric_eigenvalue(m: &Matrix) -> Result<f64> {
    ensure_square(m)?;
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let (sym, _) = sym_antisym_split(m)?;
    Ok(SymmetricEigen::new(sym).eigenvalues.min())
}

/// PSD test on the symmetric part: `λ_min((M + Mᵀ)/2) ≥ −tol`.
pub fn is_psd(m: &Matrix, tol: f64) -> Result<bool> {
    Ok(min_symmetric_eigenvalue(m)? >= -tol)
}

/// Thin SVD with singular values sorted descending.
///
/// One-sided Jacobi rotations on the columns. nalgebra's bidiagonal SVD can
/// lose accuracy on tall rank-deficient input (reconstruction errors near
/// 1e-4 were observed on 8×4 rank-3 matrices), which breaks the certificates.
pub fn svd_sorted(m: &Matrix) -> (Matrix, Vector, Matrix) {
    let (r, c) = m.shape();
    if r < c {
        let (u, s, v) = svd_sorted(&m.transpose());
        return (v, s, u);
    }
    if c == 0 {
        return (Matrix::zeros(r, 0), Vector::zeros(0), Matrix::zeros(c, 0));
    }
    let mut a = m.clone();
    let mut v = Matrix::identity(c, c);
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..c {
            for q in p + 1..c {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                rotate_columns(&mut a, p, q, cs, sn);
                rotate_columns(&mut v, p, q, cs, sn);
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..c).map(|j| a.column(j).norm()).collect();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let smax = norms[order[0]];
    let s = Vector::from_iterator(c, order.iter().map(|&i| norms[i]));
    let v_sorted = Matrix::from_columns(&order.iter().map(|&i| v.column(i).into_owned()).collect::<Vec<_>>());
    // columns with negligible norm carry no direction; complete U instead
    let negligible = smax * f64::EPSILON * c as f64;
    let mut u: Vec<Vector> = Vec::with_capacity(c);
    for &i in &order {
        if norms[i] > negligible {
            u.push(a.column(i) / norms[i]);
        }
    }
    let kept = if u.is_empty() { Matrix::zeros(r, 0) } else { Matrix::from_columns(&u) };
    let u = complete_orthonormal_basis(&kept).columns(0, c).into_owned();
    (u, s, v_sorted)
}

const JACOBI_SWEEPS: usize = 100;

fn rotate_columns(m: &mut Matrix, p: usize, q: usize, cs: f64, sn: f64) {
    for i in 0..m.nrows() {
        let (x, y) = (m[(i, p)], m[(i, q)]);
        m[(i, p)] = cs * x - sn * y;
        m[(i, q)] = sn * x + cs * y;
    }
}

/// Moore-Penrose pseudoinverse; singular values below `rel_cutoff · σ_max` are dropped.
pub fn pseudoinverse(m: &Matrix, rel_cutoff: f64) -> Matrix {
    let (r, c) = m.shape();
    let (u, s, v) = svd_sorted(m);
    let smax = s.iter().copied().fold(0.0, f64::max);
    let mut out = Matrix::zeros(c, r);
    for i in 0..s.len() {
        if s[i] > rel_cutoff * smax && s[i] > 0.0 {
            out += v.column(i) * u.column(i).transpose() / s[i];
        }
    }
    out
}

/// Minimum-norm least-squares solution of `A x = b`.
pub fn least_squares(a: &Matrix, b: &Vector) -> Vector {
    pseudoinverse(a, 1e-12) * b
}

fn max_off_diagonal_norm(m: &Matrix) -> f64 {
    let mut acc = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j {
                acc += m[(i, j)] * m[(i, j)];
            }
        }
    }
    acc.sqrt()
}

/// Common orthogonal basis for a family of commuting symmetric matrices:
/// `A_i = P diag(d_i) Pᵀ`.
#[derive(Debug, Clone)]
pub struct JointDiagonalization {
    pub basis: Matrix,
    pub diagonals: Vec<Vector>,
    /// Largest `‖offdiag(PᵀA_iP)‖_F` over the family.
    pub residual: f64,
}

/// Jointly diagonalizes commuting symmetric matrices.
///
/// Eigendecomposes a random strictly-positive combination `Σ c_i A_i` and
/// verifies that every `A_i` is diagonal in the resulting basis, retrying
/// with fresh weights when a coincidental degeneracy survives. Columns are
/// ordered by the first matrix's diagonal (descending, ties broken by the
/// later matrices) and signed so each column's leading entry is positive.
pub fn simultaneous_diagonalize_symmetric(mats: &[Matrix], tol: f64) -> Result<JointDiagonalization> {
    let first = mats.first().ok_or(LinalgError::Empty)?;
    let n = first.nrows();
    for (i, m) in mats.iter().enumerate() {
        ensure_square(m)?;
        ensure_finite(m)?;
        if m.nrows() != n {
            return Err(LinalgError::DimensionMismatch(format!(
                "matrix {i} is {}x{}, expected {n}x{n}",
                m.nrows(),
                m.ncols()
            )));
        }
        let residual = (m - m.transpose()).norm();
        if residual > tol * scale(m.norm()) {
            return Err(LinalgError::NotSymmetric { index: i, residual });
        }
    }
    for i in 0..mats.len() {
        for j in (i + 1)..mats.len() {
            let (a, b) = (&mats[i], &mats[j]);
            let residual = (a * b - b * a).norm();
            if residual > tol * scale(a.norm() * b.norm()) {
                return Err(LinalgError::NotCommuting {
                    first: i,
                    second: j,
                    residual,
                });
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(JOINT_DIAG_SEED);
    let mut worst = f64::INFINITY;
    for _ in 0..JOINT_DIAG_ATTEMPTS {
        let mut combo = Matrix::zeros(n, n);
        for m in mats {
            let w: f64 = rng.random_range(0.5..1.5);
            combo += m * (w / scale(m.norm()));
        }
        let (_, basis) = symmetric_eigen_sorted(&combo);
        let rotated: Vec<Matrix> = mats.iter().map(|m| basis.transpose() * m * &basis).collect();
        let residual = rotated
            .iter()
            .zip(mats)
            .map(|(r, m)| max_off_diagonal_norm(r) / scale(m.norm()))
            .fold(0.0, f64::max);
        if residual <= tol {
            let raw_diags: Vec<Vector> = rotated
                .iter()
                .map(|r| Vector::from_iterator(n, (0..n).map(|k| r[(k, k)])))
                .collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                for d in &raw_diags {
                    match d[b].total_cmp(&d[a]) {
                        std::cmp::Ordering::Equal => continue,
                        other => return other,
                    }
                }
                std::cmp::Ordering::Equal
            });
            let mut p = Matrix::from_columns(
                &order
                    .iter()
                    .map(|&k| basis.column(k).into_owned())
                    .collect::<Vec<_>>(),
            );
            canonical_column_signs(&mut p);
            let diagonals = raw_diags
                .iter()
                .map(|d| Vector::from_iterator(n, order.iter().map(|&k| d[k])))
                .collect();
            let residual = mats
                .iter()
                .map(|m| max_off_diagonal_norm(&(p.transpose() * m * &p)))
                .fold(0.0, f64::max);
            return Ok(JointDiagonalization {
                basis: p,
                diagonals,
                residual,
            });
        }
        worst = worst.min(residual);
    }
    Err(LinalgError::JointDiagonalization {
        attempts: JOINT_DIAG_ATTEMPTS,
        residual: worst,
    })
}

/// `max(‖AᵀB − (AᵀB)ᵀ‖_F, ‖ABᵀ − (ABᵀ)ᵀ‖_F)`, scaled by `max(1, ‖A‖‖B‖)`.
fn svd_compatibility_residual(a: &Matrix, b: &Matrix) -> f64 {
    let atb = a.transpose() * b;
    let abt = a * b.transpose();
    let r = (&atb - atb.transpose()).norm().max((&abt - abt.transpose()).norm());
    r / scale(a.norm() * b.norm())
}

/// Necessary condition for `A` and `B` to share singular vectors:
/// `AᵀB` and `ABᵀ` symmetric.
pub fn check_svd_compatibility(a: &Matrix, b: &Matrix, tol: f64) -> Result<bool> {
    if a.shape() != b.shape() {
        return Err(LinalgError::DimensionMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(svd_compatibility_residual(a, b) <= tol)
}

/// `A = P·diag(d)·Qᵀ`, `B = P·diag(e)·Qᵀ` with square orthogonal `P`, `Q`.
/// `d` and `e` have length `min(rows, cols)`; `d ≥ 0`.
#[derive(Debug, Clone)]
pub struct SvdPair {
    pub p: Matrix,
    pub d: Vector,
    pub q: Matrix,
    pub e: Vector,
    pub residual: f64,
}

impl SvdPair {
    pub fn reconstruct(&self, diag: &Vector) -> Matrix {
        let (m, n) = (self.p.nrows(), self.q.nrows());
        let mut mid = Matrix::zeros(m, n);
        for (i, &x) in diag.iter().enumerate() {
            mid[(i, i)] = x;
        }
        &self.p * mid * self.q.transpose()
    }
}

/// Simultaneous SVD of a compatible pair.
///
/// Takes the SVD of `A`, then inside each block of equal singular values
/// diagonalizes the (symmetric) restriction of `B`; the null block of `A`
/// is handled by an SVD of `B`'s restriction.
pub fn simultaneous_svd_pair(a: &Matrix, b: &Matrix, tol: f64) -> Result<SvdPair> {
    ensure_finite(a)?;
    ensure_finite(b)?;
    if a.shape() != b.shape() {
        return Err(LinalgError::DimensionMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let residual = svd_compatibility_residual(a, b);
    if residual > tol {
        return Err(LinalgError::IncompatiblePair { residual });
    }
    let (m, n) = a.shape();
    let k = m.min(n);
    let (u_thin, s, v_thin) = svd_sorted(a);
    let u_full = complete_orthonormal_basis(&u_thin);
    let v_full = complete_orthonormal_basis(&v_thin);
    let c = u_full.transpose() * b * &v_full;

    let smax = s.iter().copied().fold(0.0, f64::max);
    let zero_cut = tol * scale(smax);
    let mut p_cols: Vec<Vector> = Vec::with_capacity(m);
    let mut q_cols: Vec<Vector> = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(k);
    let mut e = Vec::with_capacity(k);

    // Nonzero singular blocks.
    let nonzero = s.iter().take_while(|&&x| x > zero_cut).count();
    let mut start = 0;
    while start < nonzero {
        let mut end = start + 1;
        while end < nonzero && (s[start] - s[end]).abs() <= tol * scale(s[start]) {
            end += 1;
        }
        let size = end - start;
        let block = c.view((start, start), (size, size)).into_owned();
        let (vals, w) = symmetric_eigen_sorted(&block);
        let ub = u_full.columns(start, size) * &w;
        let vb = v_full.columns(start, size) * &w;
        let sigma = s.rows(start, size).mean();
        for j in 0..size {
            p_cols.push(ub.column(j).into_owned());
            q_cols.push(vb.column(j).into_owned());
            d.push(sigma);
            e.push(vals[j]);
        }
        start = end;
    }

    // Null block of A: B restricted there can be any rectangular matrix.
    let (m0, n0) = (m - nonzero, n - nonzero);
    let c0 = c.view((nonzero, nonzero), (m0, n0)).into_owned();
    let (x, sv, y) = svd_sorted(&c0);
    let x_full = complete_orthonormal_basis(&x);
    let y_full = complete_orthonormal_basis(&y);
    let u0 = u_full.columns(nonzero, m0) * x_full;
    let v0 = v_full.columns(nonzero, n0) * y_full;
    for j in 0..m0 {
        p_cols.push(u0.column(j).into_owned());
    }
    for j in 0..n0 {
        q_cols.push(v0.column(j).into_owned());
    }
    for j in 0..(k - nonzero) {
        d.push(0.0);
        e.push(sv.get(j).copied().unwrap_or(0.0));
    }

    let mut p = if m == 0 { Matrix::zeros(0, 0) } else { Matrix::from_columns(&p_cols) };
    let mut q = if n == 0 { Matrix::zeros(0, 0) } else { Matrix::from_columns(&q_cols) };
    // Paired sign convention: leading entry of each P column positive, Q follows for i < k.
    let signs = canonical_column_signs(&mut p);
    for (j, s) in signs.iter().enumerate().take(k) {
        if *s < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if n > k {
        let mut tail = q.columns(k, n - k).into_owned();
        canonical_column_signs(&mut tail);
        q.columns_mut(k, n - k).copy_from(&tail);
    }

    let mut pair = SvdPair {
        p,
        d: Vector::from_vec(d),
        q,
        e: Vector::from_vec(e),
        residual: 0.0,
    };
    let ra = (pair.reconstruct(&pair.d) - a).norm() / scale(a.norm());
    let rb = (pair.reconstruct(&pair.e) - b).norm() / scale(b.norm());
    pair.residual = ra.max(rb);
    if pair.residual > tol {
        return Err(LinalgError::Alignment {
            residual: pair.residual,
        });
    }
    Ok(pair)
}
