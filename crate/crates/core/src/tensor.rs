//! Dense order-N tensors: n-mode products, matricization, HOSVD and
//! tensor-SVD composition, verification and symmetric recovery.
//!
//! Storage is row-major (last index fastest). Modes are 0-based in the API.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::linalg::{canonical_column_signs, complete_orthonormal_basis, gram_residual, scale, svd_sorted, Matrix, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("expected {expected} entries for dims {dims:?}, got {got}")]
    DataLength {
        dims: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("mode {mode} out of range for an order-{order} tensor")]
    InvalidMode { mode: usize, order: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite tensor entry")]
    NonFinite,
    #[error("factor for mode {mode} is not orthonormal: Gram residual {residual:.3e}")]
    NotOrthonormal { mode: usize, residual: f64 },
    #[error("rank {rank} exceeds the smallest dimension {min_dim}")]
    RankTooLarge { rank: usize, min_dim: usize },
    #[error("singular values {index} and {next} are not separated (gap {gap:.3e})")]
    DegenerateSpectrum { index: usize, next: usize, gap: f64 },
    #[error("recovered factors do not reproduce the tensor: relative residual {residual:.3e}")]
    VerificationFailed { residual: f64 },
}

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                dims,
                expected,
                got: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite);
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(dims);
        let mut idx = vec![0; dims.len()];
        for k in 0..t.data.len() {
            t.unravel_into(k, &mut idx);
            t.data[k] = f(&idx);
        }
        t
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        Self::from_fn(&[m.nrows(), m.ncols()], |i| m[(i[0], i[1])])
    }

    pub fn to_matrix(&self) -> Option<Matrix> {
        (self.order() == 2).then(|| Matrix::from_row_slice(self.dims[0], self.dims[1], &self.data))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn offset(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.dims).fold(0, |acc, (&i, &d)| acc * d + i)
    }

    fn unravel_into(&self, mut flat: usize, idx: &mut [usize]) {
        for (slot, &d) in idx.iter_mut().zip(&self.dims).rev() {
            *slot = flat % d;
            flat /= d;
        }
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let k = self.offset(idx);
        self.data[k] = value;
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.same_dims(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// `‖self − other‖_F`.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        self.same_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    fn same_dims(&self, other: &Self) -> Result<()> {
        if self.dims == other.dims {
            Ok(())
        } else {
            Err(TensorError::DimensionMismatch(format!("{:?} vs {:?}", self.dims, other.dims)))
        }
    }

    fn check_mode(&self, n: usize) -> Result<()> {
        if n < self.order() {
            Ok(())
        } else {
            Err(TensorError::InvalidMode {
                mode: n,
                order: self.order(),
            })
        }
    }

    /// `(Π_{m<n} D_m, Π_{m>n} D_m)`.
    fn split(&self, n: usize) -> (usize, usize) {
        (self.dims[..n].iter().product(), self.dims[n + 1..].iter().product())
    }

    /// Largest entrywise deviation from invariance under swapping any two modes.
    /// Returns `None` when the dims are not all equal.
    pub fn symmetry_residual(&self) -> Option<f64> {
        let d = *self.dims.first()?;
        if self.dims.iter().any(|&x| x != d) {
            return None;
        }
        let mut worst: f64 = 0.0;
        let mut idx = vec![0; self.order()];
        for k in 0..self.data.len() {
            self.unravel_into(k, &mut idx);
            for a in 0..idx.len() {
                for b in (a + 1)..idx.len() {
                    idx.swap(a, b);
                    worst = worst.max((self.get(&idx) - self.data[k]).abs());
                    idx.swap(a, b);
                }
            }
        }
        Some(worst)
    }
}

/// `T ×_n M`: mode `n` of size `D_n` is replaced by `M.rows`.
pub fn n_mode_product(t: &DenseTensor, m: &Matrix, n: usize) -> Result<DenseTensor> {
    t.check_mode(n)?;
    let dn = t.dims[n];
    if m.ncols() != dn {
        return Err(TensorError::DimensionMismatch(format!(
            "matrix has {} columns, mode {n} has size {dn}",
            m.ncols()
        )));
    }
    let (pre, post) = t.split(n);
    let rows = m.nrows();
    let mut dims = t.dims.clone();
    dims[n] = rows;
    let mut out = vec![0.0; pre * rows * post];
    for p in 0..pre {
        for i in 0..rows {
            let dst = &mut out[(p * rows + i) * post..(p * rows + i + 1) * post];
            for k in 0..dn {
                let c = m[(i, k)];
                if c == 0.0 {
                    continue;
                }
                let src = &t.data[(p * dn + k) * post..(p * dn + k + 1) * post];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += c * s;
                }
            }
        }
    }
    Ok(DenseTensor { dims, data: out })
}

/// Modes in the cyclic order `n+1, …, N−1, 0, …, n−1` used for matricization columns.
pub fn cyclic_modes(order: usize, n: usize) -> Vec<usize> {
    (1..order).map(|k| (n + k) % order).collect()
}

/// Mode-`n` unfolding: a `D_n × Π_{m≠n} D_m` matrix whose column index runs
/// over the cyclic modes `n+1, …, N−1, 0, …, n−1` with the first of these
/// varying slowest.
pub fn matricize(t: &DenseTensor, n: usize) -> Result<Matrix> {
    t.check_mode(n)?;
    let modes = cyclic_modes(t.order(), n);
    let cols: usize = modes.iter().map(|&m| t.dims[m]).product();
    let mut out = DMatrix::zeros(t.dims[n], cols);
    let mut idx = vec![0; t.order()];
    for k in 0..t.data.len() {
        t.unravel_into(k, &mut idx);
        let col = modes.iter().fold(0, |acc, &m| acc * t.dims[m] + idx[m]);
        out[(idx[n], col)] = t.data[k];
    }
    Ok(out)
}

/// Inverse of [`matricize`].
pub fn fold(m: &Matrix, dims: &[usize], n: usize) -> Result<DenseTensor> {
    if n >= dims.len() {
        return Err(TensorError::InvalidMode { mode: n, order: dims.len() });
    }
    let modes = cyclic_modes(dims.len(), n);
    let cols: usize = modes.iter().map(|&k| dims[k]).product();
    if m.shape() != (dims[n], cols) {
        return Err(TensorError::DimensionMismatch(format!(
            "matrix {:?} cannot fold into {dims:?} along mode {n}",
            m.shape()
        )));
    }
    Ok(DenseTensor::from_fn(dims, |idx| {
        let col = modes.iter().fold(0, |acc, &k| acc * dims[k] + idx[k]);
        m[(idx[n], col)]
    }))
}

/// Contracts mode `n` against `v`, removing that mode.
fn contract_mode(t: &DenseTensor, v: &Vector, n: usize) -> DenseTensor {
    let dn = t.dims[n];
    let (pre, post) = t.split(n);
    let mut out = vec![0.0; pre * post];
    for p in 0..pre {
        let dst = &mut out[p * post..(p + 1) * post];
        for k in 0..dn {
            let c = v[k];
            let src = &t.data[(p * dn + k) * post..(p * dn + k + 1) * post];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += c * s;
            }
        }
    }
    let mut dims = t.dims.clone();
    dims.remove(n);
    DenseTensor { dims, data: out }
}

fn check_action(t: &DenseTensor, mode: usize, v: &Vector) -> Result<()> {
    if v.len() == t.dims[mode] {
        Ok(())
    } else {
        Err(TensorError::DimensionMismatch(format!(
            "action for mode {mode} has length {}, expected {}",
            v.len(),
            t.dims[mode]
        )))
    }
}

/// Full contraction `Σ T[α]·w_0[α_0]···w_{N−1}[α_{N−1}]`.
pub fn multilinear_eval(t: &DenseTensor, actions: &[Vector]) -> Result<f64> {
    if actions.len() != t.order() {
        return Err(TensorError::DimensionMismatch(format!(
            "{} actions for an order-{} tensor",
            actions.len(),
            t.order()
        )));
    }
    for (m, v) in actions.iter().enumerate() {
        check_action(t, m, v)?;
    }
    let mut cur = t.clone();
    for v in actions.iter().rev() {
        let last = cur.order() - 1;
        cur = contract_mode(&cur, v, last);
    }
    Ok(cur.data[0])
}

/// Contracts every mode except `n`; `others` lists the remaining actions in mode order.
pub fn partial_contract(t: &DenseTensor, n: usize, others: &[Vector]) -> Result<Vector> {
    t.check_mode(n)?;
    if others.len() + 1 != t.order() {
        return Err(TensorError::DimensionMismatch(format!(
            "{} actions supplied, expected {}",
            others.len(),
            t.order() - 1
        )));
    }
    let modes: Vec<usize> = (0..t.order()).filter(|&m| m != n).collect();
    for (&m, v) in modes.iter().zip(others) {
        check_action(t, m, v)?;
    }
    let mut cur = t.clone();
    // Contract from the last mode backwards so earlier mode indices stay valid.
    for (&m, v) in modes.iter().zip(others).rev() {
        cur = contract_mode(&cur, v, m);
    }
    Ok(Vector::from_vec(cur.data))
}

/// Kronecker product of the actions over the cyclic modes after `n`
/// (leftmost factor slowest), matching the columns of [`matricize`].
/// `actions` holds all N vectors; entry `n` is ignored.
pub fn kronecker_actions(actions: &[Vector], n: usize) -> Vector {
    let mut out = vec![1.0];
    for m in cyclic_modes(actions.len(), n) {
        let v = &actions[m];
        out = out.iter().flat_map(|&a| v.iter().map(move |&b| a * b)).collect();
    }
    Vector::from_vec(out)
}

#[derive(Debug, Clone)]
pub struct HosvdResult {
    pub core: DenseTensor,
    /// Square orthogonal factor per mode.
    pub factors: Vec<Matrix>,
    /// n-mode singular values, descending, one list per mode.
    pub singular_values: Vec<Vec<f64>>,
}

impl HosvdResult {
    pub fn reconstruct(&self) -> DenseTensor {
        let mut t = self.core.clone();
        for (n, u) in self.factors.iter().enumerate() {
            t = n_mode_product(&t, u, n).expect("factor shapes match the core");
        }
        t
    }

    /// Largest `|⟨S_{i_n=α}, S_{i_n=β}⟩|` over modes and `α ≠ β`.
    pub fn all_orthogonality_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for n in 0..self.core.order() {
            let s = matricize(&self.core, n).expect("valid mode");
            let g = &s * s.transpose();
            for a in 0..g.nrows() {
                for b in 0..g.ncols() {
                    if a != b {
                        worst = worst.max(g[(a, b)].abs());
                    }
                }
            }
        }
        worst
    }

    /// True when subtensor norms are non-increasing along every mode.
    pub fn ordering_holds(&self, tol: f64) -> bool {
        self.singular_values
            .iter()
            .all(|s| s.windows(2).all(|w| w[0] + tol >= w[1]))
    }
}

/// Higher-order SVD: per-mode left singular vectors of the unfoldings and
/// the core `T ×_0 U_0ᵀ ··· ×_{N−1} U_{N−1}ᵀ`.
pub fn hosvd(t: &DenseTensor) -> HosvdResult {
    let mut factors = Vec::with_capacity(t.order());
    for n in 0..t.order() {
        let a = matricize(t, n).expect("valid mode");
        let (u, _, _) = svd_sorted(&a);
        let mut full = complete_orthonormal_basis(&u);
        canonical_column_signs(&mut full);
        factors.push(full);
    }
    let mut core = t.clone();
    for (n, u) in factors.iter().enumerate() {
        core = n_mode_product(&core, &u.transpose(), n).expect("square factor");
    }
    let singular_values = (0..t.order())
        .map(|n| {
            let s = matricize(&core, n).expect("valid mode");
            (0..s.nrows()).map(|i| s.row(i).norm()).collect()
        })
        .collect();
    HosvdResult {
        core,
        factors,
        singular_values,
    }
}

/// `T = Σ_l d_l · u_l^0 ⊗ ··· ⊗ u_l^{N−1}` with orthonormal-column factors.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSvdFactors {
    /// `D_n × L` factor per mode.
    pub factors: Vec<Matrix>,
    pub weights: Vector,
}

impl TensorSvdFactors {
    pub fn rank(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(Matrix::nrows).collect()
    }

    /// Shape checks, then orthonormality of every factor within `tol`.
    pub fn check(&self, tol: f64) -> Result<()> {
        let l = self.rank();
        for (n, u) in self.factors.iter().enumerate() {
            if u.ncols() != l {
                return Err(TensorError::DimensionMismatch(format!(
                    "factor {n} has {} columns, rank is {l}",
                    u.ncols()
                )));
            }
        }
        let min_dim = self.dims().into_iter().min().unwrap_or(0);
        if l > min_dim {
            return Err(TensorError::RankTooLarge { rank: l, min_dim });
        }
        for (n, u) in self.factors.iter().enumerate() {
            let residual = gram_residual(u);
            if residual > tol {
                return Err(TensorError::NotOrthonormal { mode: n, residual });
            }
        }
        Ok(())
    }
}

/// Sum of weighted outer products; factor orthonormality is checked at `1e-9`.
pub fn compose_tensor_svd(f: &TensorSvdFactors) -> Result<DenseTensor> {
    f.check(1e-9)?;
    Ok(compose_unchecked(f))
}

fn compose_unchecked(f: &TensorSvdFactors) -> DenseTensor {
    let dims = f.dims();
    DenseTensor::from_fn(&dims, |idx| {
        (0..f.rank())
            .map(|l| {
                f.weights[l]
                    * idx
                        .iter()
                        .zip(&f.factors)
                        .map(|(&i, u)| u[(i, l)])
                        .product::<f64>()
            })
            .sum()
    })
}

/// `‖T − compose(f)‖_F`, ignoring factor orthonormality.
pub fn tensor_svd_residual(t: &DenseTensor, f: &TensorSvdFactors) -> Result<f64> {
    if t.dims() != f.dims().as_slice() {
        return Err(TensorError::DimensionMismatch(format!(
            "tensor {:?} vs factors {:?}",
            t.dims(),
            f.dims()
        )));
    }
    compose_unchecked(f).distance(t)
}

/// True iff the factors are orthonormal and reproduce `t` within `tol`.
pub fn verify_tensor_svd(t: &DenseTensor, f: &TensorSvdFactors, tol: f64) -> Result<bool> {
    let residual = tensor_svd_residual(t, f)?;
    match f.check(tol) {
        Ok(()) => Ok(residual <= tol),
        Err(TensorError::NotOrthonormal { .. }) | Err(TensorError::RankTooLarge { .. }) => Ok(false),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryOptions {
    /// Bound on `‖T − compose‖_F / max(1, ‖T‖_F)`.
    pub verify_tol: f64,
    /// Minimum separation between consecutive retained singular values,
    /// relative to the largest.
    pub gap_tol: f64,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            verify_tol: 1e-8,
            gap_tol: 1e-6,
        }
    }
}

/// Unverified candidate factors for a symmetric tensor plus the singular
/// values of its first unfolding.
pub fn symmetric_tensor_svd_candidates(t: &DenseTensor, rank: usize) -> Result<(TensorSvdFactors, Vec<f64>)> {
    let d = *t.dims().first().ok_or_else(|| TensorError::DimensionMismatch("order-0 tensor".into()))?;
    if t.dims().iter().any(|&x| x != d) {
        return Err(TensorError::DimensionMismatch(format!("symmetric recovery needs equal dims, got {:?}", t.dims())));
    }
    if rank > d {
        return Err(TensorError::RankTooLarge { rank, min_dim: d });
    }
    let a = matricize(t, 0)?;
    let (u, s, _) = svd_sorted(&a);
    let mut p = u.columns(0, rank).into_owned();
    canonical_column_signs(&mut p);
    let weights = Vector::from_iterator(
        rank,
        (0..rank).map(|r| {
            let col: Vector = p.column(r).into_owned();
            let core = multilinear_eval(t, &vec![col; t.order()]).expect("matching dims");
            if core < 0.0 {
                -s[r]
            } else {
                s[r]
            }
        }),
    );
    let factors = vec![p; t.order()];
    Ok((TensorSvdFactors { factors, weights }, s.iter().copied().collect()))
}

/// Recovers `T = Σ_r d_r p_r ⊗ ··· ⊗ p_r` from the SVD of the first unfolding.
/// Columns are signed so their leading entry is positive; the sign of `d_r`
/// comes from the core entry `T ×_0 p_r ··· ×_{N−1} p_r`.
pub fn recover_symmetric_tensor_svd(t: &DenseTensor, rank: usize) -> Result<TensorSvdFactors> {
    recover_symmetric_tensor_svd_with(t, rank, &RecoveryOptions::default())
}

pub fn recover_symmetric_tensor_svd_with(t: &DenseTensor, rank: usize, opts: &RecoveryOptions) -> Result<TensorSvdFactors> {
    let (f, s) = symmetric_tensor_svd_candidates(t, rank)?;
    let smax = s.first().copied().unwrap_or(0.0);
    // Retained values must be separated from each other and from the discarded tail.
    let last = rank.min(s.len().saturating_sub(1));
    for i in 0..last {
        let gap = s[i] - s[i + 1];
        if gap <= opts.gap_tol * scale(smax) && s[i] > opts.gap_tol * scale(smax) {
            return Err(TensorError::DegenerateSpectrum { index: i, next: i + 1, gap });
        }
    }
    let residual = tensor_svd_residual(t, &f)? / scale(t.frobenius_norm());
    if residual > opts.verify_tol {
        return Err(TensorError::VerificationFailed { residual });
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthonormalize;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t123() -> DenseTensor {
        DenseTensor::new(vec![2, 2, 2], (1..=8).map(f64::from).collect()).unwrap()
    }

    fn random_tensor(dims: &[usize], seed: u64) -> DenseTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseTensor::from_fn(dims, |_| rng.random_range(-1.0..1.0))
    }

    fn random_orthonormal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        orthonormalize(&Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))).unwrap()
    }

    /// Column index written out term by term from the 1-based unfolding formula.
    fn def_column(alpha: &[usize], dims: &[usize], n: usize) -> usize {
        let order = dims.len();
        let seq: Vec<usize> = (n + 1..=order).chain(1..n).collect();
        let mut col = 0;
        for (pos, &m) in seq.iter().enumerate() {
            let stride: usize = seq[pos + 1..].iter().map(|&k| dims[k - 1]).product();
            col += (alpha[m - 1] - 1) * stride;
        }
        col + 1
    }

    #[test]
    fn n_mode_identity_and_matrix_case() {
        let t = random_tensor(&[2, 3, 2], 1);
        assert_eq!(n_mode_product(&t, &Matrix::identity(3, 3), 1).unwrap(), t);
        let a = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let m = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 2.0]);
        let got = n_mode_product(&DenseTensor::from_matrix(&a), &m, 0).unwrap();
        assert_eq!(got.to_matrix().unwrap(), &m * &a);
    }

    #[test]
    fn n_mode_row_vector() {
        let got = n_mode_product(&t123(), &Matrix::from_row_slice(1, 2, &[1.0, 1.0]), 2).unwrap();
        assert_eq!(got.dims(), &[2, 2, 1]);
        assert_eq!(got.data(), &[3.0, 7.0, 11.0, 15.0]);
        assert!(n_mode_product(&t123(), &Matrix::identity(3, 3), 0).is_err());
    }

    #[test]
    fn matricize_examples() {
        let t = t123();
        let m0 = matricize(&t, 0).unwrap();
        assert_eq!(m0, Matrix::from_row_slice(2, 4, &[1., 2., 3., 4., 5., 6., 7., 8.]));
        let m1 = matricize(&t, 1).unwrap();
        assert_eq!(m1, Matrix::from_row_slice(2, 4, &[1., 5., 2., 6., 3., 7., 4., 8.]));
        let a = Matrix::from_row_slice(2, 3, &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(matricize(&DenseTensor::from_matrix(&a), 0).unwrap(), a);
        assert!(matches!(matricize(&t, 3), Err(TensorError::InvalidMode { mode: 3, order: 3 })));
    }

    #[test]
    fn matricize_matches_index_formula() {
        for dims in [vec![2, 3, 4], vec![3, 2, 2, 3], vec![4, 1, 3]] {
            let t = random_tensor(&dims, 3);
            for n in 0..dims.len() {
                let m = matricize(&t, n).unwrap();
                let mut idx = vec![0; dims.len()];
                for k in 0..t.len() {
                    t.unravel_into(k, &mut idx);
                    let alpha: Vec<usize> = idx.iter().map(|i| i + 1).collect();
                    let col = def_column(&alpha, &dims, n + 1) - 1;
                    assert_eq!(m[(idx[n], col)], t.data()[k]);
                }
                assert_eq!(fold(&m, &dims, n).unwrap(), t);
            }
        }
    }

    #[test]
    fn multilinear_examples() {
        let t = t123();
        let ones = Vector::from_element(2, 1.0);
        assert_eq!(multilinear_eval(&t, &[ones.clone(), ones.clone(), ones.clone()]).unwrap(), 36.0);
        let e = |i: usize| {
            let mut v = Vector::zeros(2);
            v[i] = 1.0;
            v
        };
        assert_eq!(multilinear_eval(&t, &[e(1), e(0), e(1)]).unwrap(), t.get(&[1, 0, 1]));
        let u = Vector::from_vec(vec![0.6, 0.8]);
        let v = Vector::from_vec(vec![0.0, 1.0]);
        let rank1 = DenseTensor::from_fn(&[2, 2], |i| u[i[0]] * v[i[1]]);
        assert!((multilinear_eval(&rank1, &[u, v]).unwrap() - 1.0).abs() < 1e-15);
        assert!(multilinear_eval(&t, &[ones.clone(), ones]).is_err());
    }

    #[test]
    fn partial_contract_examples() {
        let t = t123();
        let ones = Vector::from_element(2, 1.0);
        let got = partial_contract(&t, 0, &[ones.clone(), ones.clone()]).unwrap();
        assert_eq!(got.as_slice(), &[10.0, 26.0]);
        let a = Matrix::from_row_slice(2, 3, &[1., 2., 3., 4., 5., 6.]);
        let w = Vector::from_vec(vec![1.0, -1.0, 2.0]);
        assert_eq!(partial_contract(&DenseTensor::from_matrix(&a), 0, &[w.clone()]).unwrap(), &a * &w);
        let e0 = Vector::from_vec(vec![1.0, 0.0]);
        let e1 = Vector::from_vec(vec![0.0, 1.0]);
        let fiber = partial_contract(&t, 1, &[e1, e0]).unwrap();
        assert_eq!(fiber.as_slice(), &[t.get(&[1, 0, 0]), t.get(&[1, 1, 0])]);
    }

    #[test]
    fn hosvd_rank_one() {
        let u = Vector::from_vec(vec![0.6, 0.8]);
        let v = Vector::from_vec(vec![1.0, 0.0, 0.0]);
        let w = Vector::from_vec(vec![0.0, 0.0, 1.0]);
        let t = DenseTensor::from_fn(&[2, 3, 3], |i| 2.0 * u[i[0]] * v[i[1]] * w[i[2]]);
        let h = hosvd(&t);
        let nonzero: Vec<f64> = h.core.data().iter().copied().filter(|x| x.abs() > 1e-12).collect();
        assert_eq!(nonzero.len(), 1);
        assert!((nonzero[0].abs() - 2.0).abs() < 1e-12);
        for s in &h.singular_values {
            assert!((s[0] - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hosvd_diagonal_matrix() {
        let t = DenseTensor::from_matrix(&Matrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]));
        let h = hosvd(&t);
        assert!((h.core.to_matrix().unwrap() - Matrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0])).norm() < 1e-12);
        assert!((h.factors[0].abs() - Matrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn hosvd_random_properties() {
        for seed in 0..5 {
            let t = random_tensor(&[3, 3, 3], seed);
            let h = hosvd(&t);
            assert!(h.reconstruct().distance(&t).unwrap() <= 1e-10);
            assert!(h.all_orthogonality_residual() <= 1e-10);
            assert!(h.ordering_holds(1e-12));
            for (n, u) in h.factors.iter().enumerate() {
                assert!(gram_residual(u) < 1e-12);
                // n-mode singular values are the singular values of the unfolding
                let (_, s, _) = svd_sorted(&matricize(&t, n).unwrap());
                for (a, b) in s.iter().zip(&h.singular_values[n]) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn compose_examples() {
        let e = Matrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]);
        let f = TensorSvdFactors {
            factors: vec![e.clone(), e.clone(), e],
            weights: Vector::from_vec(vec![2.0]),
        };
        let t = compose_tensor_svd(&f).unwrap();
        assert_eq!(t.get(&[0, 0, 0]), 2.0);
        assert_eq!(t.frobenius_norm(), 2.0);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random_orthonormal(3, 2, &mut rng);
        let v = random_orthonormal(4, 2, &mut rng);
        let f = TensorSvdFactors {
            factors: vec![u.clone(), v.clone()],
            weights: Vector::from_vec(vec![1.0, -1.0]),
        };
        let t = compose_tensor_svd(&f).unwrap();
        let expect = &u * Matrix::from_diagonal(&f.weights) * v.transpose();
        assert!((t.to_matrix().unwrap() - expect).norm() < 1e-14);
    }

    #[test]
    fn verify_round_trip_and_failures() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = TensorSvdFactors {
            factors: vec![
                random_orthonormal(3, 2, &mut rng),
                random_orthonormal(2, 2, &mut rng),
                random_orthonormal(4, 2, &mut rng),
            ],
            weights: Vector::from_vec(vec![1.5, -0.5]),
        };
        let t = compose_tensor_svd(&f).unwrap();
        assert!(tensor_svd_residual(&t, &f).unwrap() <= 1e-12);
        assert!(verify_tensor_svd(&t, &f, 1e-12).unwrap());
        let mut bumped = t.clone();
        bumped.set(&[0, 0, 0], t.get(&[0, 0, 0]) + 1.0);
        assert!(!verify_tensor_svd(&bumped, &f, 1e-9).unwrap());
        let mut skew = f.clone();
        skew.factors[0][(0, 0)] += 0.5;
        assert!(!verify_tensor_svd(&compose_unchecked(&skew), &skew, 1e-9).unwrap());
        assert!(verify_tensor_svd(&DenseTensor::zeros(&[2, 2]), &f, 1e-9).is_err());
    }

    #[test]
    fn hosvd_of_tensor_svd_has_diagonal_core() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = TensorSvdFactors {
            factors: vec![random_orthonormal(3, 3, &mut rng), random_orthonormal(3, 3, &mut rng), random_orthonormal(3, 3, &mut rng)],
            weights: Vector::from_vec(vec![3.0, -2.0, 1.0]),
        };
        let h = hosvd(&compose_tensor_svd(&f).unwrap());
        let mut off = 0.0;
        for (k, x) in h.core.data().iter().enumerate() {
            let idx = {
                let mut i = vec![0; 3];
                h.core.unravel_into(k, &mut i);
                i
            };
            if !(idx[0] == idx[1] && idx[1] == idx[2]) {
                off += x * x;
            }
        }
        assert!(off.sqrt() < 1e-10);
    }

    #[test]
    fn recover_symmetric_round_trip() {
        let i2 = Matrix::identity(2, 2);
        let f = TensorSvdFactors {
            factors: vec![i2.clone(); 4],
            weights: Vector::from_vec(vec![2.0, -1.0]),
        };
        let t = compose_tensor_svd(&f).unwrap();
        let got = recover_symmetric_tensor_svd(&t, 2).unwrap();
        assert!((got.weights.clone() - f.weights).norm() < 1e-12);
        assert!((got.factors[0].abs() - i2).norm() < 1e-12);
    }

    #[test]
    fn recover_odd_order_rotated() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = random_orthonormal(3, 3, &mut rng);
        let f = TensorSvdFactors {
            factors: vec![p.clone(); 3],
            weights: Vector::from_vec(vec![-3.0, 2.0, 0.5]),
        };
        let t = compose_tensor_svd(&f).unwrap();
        let got = recover_symmetric_tensor_svd(&t, 3).unwrap();
        assert!(tensor_svd_residual(&t, &got).unwrap() < 1e-10);
        // odd order: a weight's sign follows its column's sign convention, so compare magnitudes
        let mut abs_got: Vec<f64> = got.weights.iter().map(|x| x.abs()).collect();
        abs_got.sort_by(f64::total_cmp);
        assert!((abs_got[0] - 0.5).abs() < 1e-10 && (abs_got[1] - 2.0).abs() < 1e-10 && (abs_got[2] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn recover_zero_and_degenerate() {
        let z = DenseTensor::zeros(&[2, 2, 2, 2]);
        let got = recover_symmetric_tensor_svd(&z, 0).unwrap();
        assert_eq!(got.rank(), 0);
        let f = TensorSvdFactors {
            factors: vec![Matrix::identity(2, 2); 4],
            weights: Vector::from_vec(vec![1.0, -1.0]),
        };
        let t = compose_tensor_svd(&f).unwrap();
        assert!(matches!(recover_symmetric_tensor_svd(&t, 2), Err(TensorError::DegenerateSpectrum { .. })));
    }

    #[test]
    fn recover_rejects_non_decomposable() {
        let t = random_tensor(&[2, 2, 2], 8);
        assert!(matches!(recover_symmetric_tensor_svd(&t, 2), Err(TensorError::VerificationFailed { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn matricize_commutes_with_mode_product(seed in 0u64..10_000, n in 0usize..3, rows in 1usize..4) {
            let t = random_tensor(&[2, 3, 2], seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let m = Matrix::from_fn(rows, t.dims()[n], |_, _| rng.random_range(-1.0..1.0));
            let lhs = matricize(&n_mode_product(&t, &m, n).unwrap(), n).unwrap();
            let rhs = &m * matricize(&t, n).unwrap();
            prop_assert!((lhs - rhs).norm() <= 1e-10);
        }

        #[test]
        fn partial_contract_consistent(seed in 0u64..10_000, n in 0usize..3) {
            let dims = [2usize, 3, 2];
            let t = random_tensor(&dims, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
            let acts: Vec<Vector> = dims.iter().map(|&d| Vector::from_fn(d, |_, _| rng.random_range(-1.0..1.0))).collect();
            let others: Vec<Vector> = acts.iter().enumerate().filter(|(m, _)| *m != n).map(|(_, v)| v.clone()).collect();
            let g = partial_contract(&t, n, &others).unwrap();
            let full = multilinear_eval(&t, &acts).unwrap();
            prop_assert!((g.dot(&acts[n]) - full).abs() <= 1e-12 * full.abs().max(1.0));
            // unfolding times the Kronecker action gives the same vector
            let via_unfolding = matricize(&t, n).unwrap() * kronecker_actions(&acts, n);
            prop_assert!((via_unfolding - g).norm() <= 1e-12);
        }
    }
}
