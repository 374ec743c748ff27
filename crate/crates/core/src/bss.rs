//! Blind source separation pipelines: seeded sources, mixing, covariance and
//! fourth-cumulant estimation, PCA games and tensor-SVD mixing recovery.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::dynamics::{nash_check, simulate, DynamicsConfig, ProbeConfig, StepSchedule, Termination};
use crate::error::{Error, Result};
use crate::game::{FeasibleSet, Game, LossSpec};
use crate::linalg::{canonical_column_signs, gram_residual, scale, symmetric_eigen_sorted, Matrix, Vector};
use crate::safety::{
    certify_quadratic_block, certify_quadratic_open, empirical_safety, CertificateResult, SafetyReport, SamplerConfig,
};
use crate::sampling::{sample_point, stream, unit_vector};
use crate::tensor::{
    multilinear_eval, recover_symmetric_tensor_svd_with, symmetric_tensor_svd_candidates, tensor_svd_residual,
    DenseTensor, RecoveryOptions, TensorError, TensorSvdFactors,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceDist {
    /// Uniform on `(−√3, √3)`.
    Uniform,
    /// Laplace with scale `1/√2`.
    Laplace,
    /// `±1` with equal probability.
    TwoPoint,
    Gaussian,
}

impl SourceDist {
    /// Population excess kurtosis `E[x⁴] − 3`.
    pub fn excess_kurtosis(self) -> f64 {
        match self {
            Self::Uniform => -1.2,
            Self::Laplace => 3.0,
            Self::TwoPoint => -2.0,
            Self::Gaussian => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Uniform => "uniform",
            Self::Laplace => "laplace",
            Self::TwoPoint => "two-point",
            Self::Gaussian => "gaussian",
        }
    }

    fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            Self::Uniform => rng.random_range(-3f64.sqrt()..3f64.sqrt()),
            Self::Laplace => {
                let (a, b): (f64, f64) = (Exp1.sample(rng), Exp1.sample(rng));
                (a - b) * std::f64::consts::FRAC_1_SQRT_2
            }
            Self::TwoPoint => {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            }
            Self::Gaussian => StandardNormal.sample(rng),
        }
    }
}

impl fmt::Display for SourceDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "laplace" => Ok(Self::Laplace),
            "two-point" | "twopoint" => Ok(Self::TwoPoint),
            "gaussian" => Ok(Self::Gaussian),
            other => Err(Error::InvalidInput(format!("unknown source distribution {other:?}"))),
        }
    }
}

/// `D×T` signals, one row per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBatch {
    pub data: Matrix,
    pub seed: u64,
    /// Distribution label carried into the CSV header.
    pub dist: String,
}

impl SignalBatch {
    pub fn new(data: Matrix, seed: u64, dist: impl Into<String>) -> Result<Self> {
        if data.ncols() == 0 {
            return Err(Error::InvalidInput("a batch needs at least one sample".into()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("batch has non-finite entries".into()));
        }
        Ok(Self { data, seed, dist: dist.into() })
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn samples(&self) -> usize {
        self.data.ncols()
    }

    /// First line `D,T,seed,dist` with the batch's values, then one row per channel.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{},{},{}\n", self.channels(), self.samples(), self.seed, self.dist);
        for row in self.data.row_iter() {
            let cells: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::InvalidInput(format!("signal CSV: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty input"))?.split(',').map(str::trim).collect();
        if header.len() != 4 {
            return Err(bad("header must be D,T,seed,dist"));
        }
        let d: usize = header[0].parse().map_err(|_| bad("bad D"))?;
        let t: usize = header[1].parse().map_err(|_| bad("bad T"))?;
        let seed: u64 = header[2].parse().map_err(|_| bad("bad seed"))?;
        let mut data = Matrix::zeros(d, t);
        for i in 0..d {
            let line = lines.next().ok_or_else(|| bad("too few rows"))?;
            let vals: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("unparsable value"))?;
            if vals.len() != t {
                return Err(bad(&format!("row {i} has {} values, expected {t}", vals.len())));
            }
            for (j, v) in vals.into_iter().enumerate() {
                data[(i, j)] = v;
            }
        }
        if lines.next().is_some() {
            return Err(bad("too many rows"));
        }
        Self::new(data, seed, header[3])
    }
}

/// `L` independent rows of `T` samples, row `i` drawn from stream `(seed, i)`.
/// Each row is then centered and scaled to unit sample variance.
pub fn generate_sources(l: usize, t: usize, dist: SourceDist, seed: u64) -> Result<SignalBatch> {
    generate_mixed_sources(&vec![dist; l], t, seed)
}

/// Like [`generate_sources`] with one distribution per row.
pub fn generate_mixed_sources(dists: &[SourceDist], t: usize, seed: u64) -> Result<SignalBatch> {
    if t == 0 || dists.is_empty() {
        return Err(Error::InvalidInput("need at least one source and one sample".into()));
    }
    let mut data = Matrix::zeros(dists.len(), t);
    for (i, &dist) in dists.iter().enumerate() {
        let mut rng = stream(seed, i as u64);
        for j in 0..t {
            data[(i, j)] = dist.sample(&mut rng);
        }
        if t > 1 {
            let mean = data.row(i).mean();
            let mut row = data.row_mut(i);
            row.add_scalar_mut(-mean);
            let sd = (row.norm_squared() / t as f64).sqrt();
            if sd > 0.0 {
                row /= sd;
            }
        }
    }
    let label = if dists.iter().all(|d| *d == dists[0]) {
        dists[0].as_str().to_string()
    } else {
        "mixed".to_string()
    };
    SignalBatch::new(data, seed, label)
}

/// Rotates the rows of `s` so that `SSᵀ = T·I` exactly.
///
/// Independent sources are only uncorrelated in the population limit; the
/// PCA demos use this to make the shared-mixing structure exact.
pub fn decorrelate(s: &SignalBatch) -> Result<SignalBatch> {
    let t = s.samples() as f64;
    let (vals, vecs) = symmetric_eigen_sorted(&(&s.data * s.data.transpose() / t));
    let min = vals.min();
    if min <= 1e-12 * scale(vals.max()) {
        return Err(Error::RankDeficientCovariance { min_eig: min });
    }
    let w = &vecs * Matrix::from_diagonal(&vals.map(|x| 1.0 / x.sqrt())) * vecs.transpose();
    SignalBatch::new(w * &s.data, s.seed, s.dist.clone())
}

#[derive(Debug, Clone, PartialEq)]
pub enum MixingStructure {
    /// Orthonormal columns.
    Orthogonal,
    /// Row blocks `M_n = P_n R_n` with `P_n` orthogonal and `R_n` diagonal up
    /// to column selection.
    BlockView { sizes: Vec<usize> },
    General,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingModel {
    mixing: Matrix,
    structure: MixingStructure,
    pub dist: SourceDist,
    pub noise: f64,
    pub seed: u64,
}

const STRUCTURE_TOL: f64 = 1e-9;

impl MixingModel {
    /// Checks the structure tag against `mixing`.
    pub fn new(mixing: Matrix, structure: MixingStructure, dist: SourceDist, noise: f64, seed: u64) -> Result<Self> {
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::InvalidInput(format!("noise level must be nonnegative, got {noise}")));
        }
        match &structure {
            MixingStructure::Orthogonal => {
                let r = gram_residual(&mixing);
                if r > STRUCTURE_TOL {
                    return Err(Error::InvalidInput(format!("mixing columns are not orthonormal (residual {r:.3e})")));
                }
            }
            MixingStructure::BlockView { sizes } => {
                if sizes.iter().sum::<usize>() != mixing.nrows() || sizes.contains(&0) {
                    return Err(Error::InvalidInput(format!("blocks {sizes:?} do not partition {} rows", mixing.nrows())));
                }
                let mut start = 0;
                for (k, &s) in sizes.iter().enumerate() {
                    // M_nᵀM_n = R_nᵀR_n must be diagonal
                    let m = mixing.rows(start, s);
                    let g = m.transpose() * m;
                    let off = (&g - Matrix::from_diagonal(&g.diagonal())).norm();
                    if off > STRUCTURE_TOL * scale(g.norm()) {
                        return Err(Error::InvalidInput(format!("row block {k} is not an orthogonal change of basis of a diagonal")));
                    }
                    let used = g.diagonal().iter().filter(|&&x| x > STRUCTURE_TOL).count();
                    if used > s {
                        return Err(Error::InvalidInput(format!("row block {k} mixes {used} latents into {s} rows")));
                    }
                    start += s;
                }
            }
            MixingStructure::General => {}
        }
        Ok(Self { mixing, structure, dist, noise, seed })
    }

    /// Builds `M_n = P_n·R_n` from per-block orthogonal `P_n` and `d_n×L` selections `R_n`.
    pub fn block_view(p_blocks: &[Matrix], r_blocks: &[Matrix], dist: SourceDist, noise: f64, seed: u64) -> Result<Self> {
        if p_blocks.len() != r_blocks.len() || p_blocks.is_empty() {
            return Err(Error::InvalidInput("need one P and one R per block".into()));
        }
        let l = r_blocks[0].ncols();
        let sizes: Vec<usize> = p_blocks.iter().map(Matrix::nrows).collect();
        let mut m = Matrix::zeros(sizes.iter().sum(), l);
        let mut start = 0;
        for (p, r) in p_blocks.iter().zip(r_blocks) {
            if r.ncols() != l || p.ncols() != r.nrows() {
                return Err(Error::InvalidInput("block shapes do not match".into()));
            }
            m.rows_mut(start, p.nrows()).copy_from(&(p * r));
            start += p.nrows();
        }
        Self::new(m, MixingStructure::BlockView { sizes }, dist, noise, seed)
    }

    pub fn mixing(&self) -> &Matrix {
        &self.mixing
    }

    pub fn structure(&self) -> &MixingStructure {
        &self.structure
    }

    pub fn latents(&self) -> usize {
        self.mixing.ncols()
    }
}

/// `X = MS + σ·N` with noise rows drawn from streams offset past the sources.
pub fn mix(model: &MixingModel, s: &SignalBatch) -> Result<SignalBatch> {
    if s.channels() != model.latents() {
        return Err(Error::InvalidInput(format!(
            "mixing expects {} sources, batch has {}",
            model.latents(),
            s.channels()
        )));
    }
    let mut x = &model.mixing * &s.data;
    if model.noise > 0.0 {
        for i in 0..x.nrows() {
            let mut rng = stream(model.seed, (1u64 << 32) + i as u64);
            for j in 0..x.ncols() {
                let z: f64 = StandardNormal.sample(&mut rng);
                x[(i, j)] += model.noise * z;
            }
        }
    }
    SignalBatch::new(x, s.seed, s.dist.clone())
}

/// Gram matrix `XXᵀ`, or `XXᵀ/T` when `normalized`.
pub fn covariance(x: &Matrix, normalized: bool) -> Matrix {
    let g = x * x.transpose();
    if normalized && x.ncols() > 0 {
        g / x.ncols() as f64
    } else {
        g
    }
}

fn centered(x: &Matrix) -> Matrix {
    let mut c = x.clone();
    for i in 0..c.nrows() {
        let m = c.row(i).mean();
        c.row_mut(i).add_scalar_mut(-m);
    }
    c
}

const PERMUTATIONS_4: [[usize; 4]; 24] = [
    [0, 1, 2, 3], [0, 1, 3, 2], [0, 2, 1, 3], [0, 2, 3, 1], [0, 3, 1, 2], [0, 3, 2, 1],
    [1, 0, 2, 3], [1, 0, 3, 2], [1, 2, 0, 3], [1, 2, 3, 0], [1, 3, 0, 2], [1, 3, 2, 0],
    [2, 0, 1, 3], [2, 0, 3, 1], [2, 1, 0, 3], [2, 1, 3, 0], [2, 3, 0, 1], [2, 3, 1, 0],
    [3, 0, 1, 2], [3, 0, 2, 1], [3, 1, 0, 2], [3, 1, 2, 0], [3, 2, 0, 1], [3, 2, 1, 0],
];

/// Fourth-order joint cumulant of the centered rows of `x`:
/// `E[x_ix_jx_kx_l] − E[x_ix_j]E[x_kx_l] − E[x_ix_k]E[x_jx_l] − E[x_ix_l]E[x_jx_k]`.
/// Computed once per sorted index tuple and copied, so it is exactly symmetric.
pub fn fourth_cumulant_tensor(x: &Matrix) -> DenseTensor {
    let d = x.nrows();
    let t = x.ncols().max(1) as f64;
    let xc = centered(x);
    let c = covariance(&xc, true);
    let mut out = DenseTensor::zeros(&[d; 4]);
    for i in 0..d {
        for j in i..d {
            let xij: Vec<f64> = (0..xc.ncols()).map(|s| xc[(i, s)] * xc[(j, s)]).collect();
            for k in j..d {
                for l in k..d {
                    let m4 = (0..xc.ncols()).map(|s| xij[s] * xc[(k, s)] * xc[(l, s)]).sum::<f64>() / t;
                    let v = m4 - c[(i, j)] * c[(k, l)] - c[(i, k)] * c[(j, l)] - c[(i, l)] * c[(j, k)];
                    let idx = [i, j, k, l];
                    for p in PERMUTATIONS_4 {
                        out.set(&[idx[p[0]], idx[p[1]], idx[p[2]], idx[p[3]]], v);
                    }
                }
            }
        }
    }
    out
}

/// `K ×_0 P ×_1 P ×_2 P ×_3 P` for a diagonal cumulant `K = diag(kappa)`.
pub fn population_cumulant(p: &Matrix, kappa: &Vector) -> Result<DenseTensor> {
    let f = TensorSvdFactors {
        factors: vec![p.clone(); 4],
        weights: kappa.clone(),
    };
    Ok(crate::tensor::compose_tensor_svd(&f)?)
}

fn quadratic_losses(batches: &[SignalBatch], normalized: bool) -> Result<Vec<LossSpec>> {
    let d = batches.first().ok_or_else(|| Error::InvalidInput("no batches".into()))?.channels();
    batches
        .iter()
        .map(|b| {
            if b.channels() != d {
                return Err(Error::InvalidInput(format!("batches have {} and {d} channels", b.channels())));
            }
            Ok(LossSpec::quadratic(-covariance(&b.data, normalized), Vector::zeros(d))?)
        })
        .collect()
}

/// Open game with `ℓ_n = −½wᵀX⁽ⁿ⁾X⁽ⁿ⁾ᵀw` on the unit ball.
pub fn pca_game(batches: &[SignalBatch], normalized: bool) -> Result<Game> {
    let losses = quadratic_losses(batches, normalized)?;
    let d = batches[0].channels();
    Ok(Game::open(d, losses, FeasibleSet::unit_ball(d))?)
}

/// Block game: player `n` controls the `n`-th coordinate block, confined to
/// its unit ball, and minimizes `−½wᵀX⁽ⁿ⁾X⁽ⁿ⁾ᵀw`.
pub fn block_pca_game(batches: &[SignalBatch], sizes: &[usize], normalized: bool) -> Result<Game> {
    if sizes.len() != batches.len() {
        return Err(Error::InvalidInput(format!("{} blocks for {} batches", sizes.len(), batches.len())));
    }
    let losses = quadratic_losses(batches, normalized)?;
    Ok(Game::block(sizes, losses, FeasibleSet::BlockBall { sizes: sizes.to_vec(), radius: 1.0 })?)
}

/// ZCA whitening of the centered data: returns `(Z, W)` with `Z = W·X_c` and
/// `ZZᵀ/T = I`.
pub fn whiten(x: &Matrix) -> Result<(Matrix, Matrix)> {
    let xc = centered(x);
    let c = covariance(&xc, true);
    let (vals, vecs) = symmetric_eigen_sorted(&c);
    let min = vals.min();
    if !(min > 1e-12 * scale(vals.max())) {
        return Err(Error::RankDeficientCovariance { min_eig: min });
    }
    let w = &vecs * Matrix::from_diagonal(&vals.map(|x| 1.0 / x.sqrt())) * vecs.transpose();
    Ok((&w * xc, w))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingRecoveryConfig {
    pub recovery: RecoveryOptions,
    /// Below this largest `|kurtosis|` the recovery is flagged unreliable.
    pub min_kurtosis: f64,
    /// Retry with a random contraction when the unfolding spectrum is
    /// degenerate. Off means `DegenerateSpectrum` is returned as is.
    pub contraction_fallback: bool,
    pub seed: u64,
}

impl Default for MixingRecoveryConfig {
    fn default() -> Self {
        Self {
            recovery: RecoveryOptions { verify_tol: 0.25, gap_tol: 0.05 },
            min_kurtosis: 0.25,
            contraction_fallback: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecoveryMethod {
    /// SVD of the first unfolding.
    Unfolding,
    /// Eigenvectors of a random two-mode contraction, used when kurtosis
    /// magnitudes coincide and the unfolding cannot separate them.
    Contraction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixingRecovery {
    /// Estimated mixing in whitened coordinates, one column per source.
    pub mixing: Matrix,
    /// Signed excess kurtosis per recovered column.
    pub kurtosis: Vector,
    pub whitening: Matrix,
    pub reliable: bool,
    pub method: RecoveryMethod,
    /// `‖T − compose‖_F / ‖T‖_F` for the whitened cumulant.
    pub residual: f64,
}

fn contraction_factors(t: &DenseTensor, d: usize, seed: u64) -> Result<(TensorSvdFactors, f64)> {
    let mut best: Option<(f64, Matrix)> = None;
    for attempt in 0..16u64 {
        let a = unit_vector(&mut stream(seed, attempt), d);
        let m = Matrix::from_fn(d, d, |i, j| {
            (0..d).flat_map(|k| (0..d).map(move |l| (k, l))).map(|(k, l)| t.get(&[i, j, k, l]) * a[k] * a[l]).sum()
        });
        let (vals, vecs) = symmetric_eigen_sorted(&m);
        let spread = vals.iter().map(|x| x.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let gap = (1..d).map(|i| (vals[i - 1] - vals[i]) / spread).fold(f64::INFINITY, f64::min);
        if best.as_ref().is_none_or(|(g, _)| gap > *g) {
            best = Some((gap, vecs));
        }
    }
    let (_, mut u) = best.expect("at least one attempt");
    canonical_column_signs(&mut u);
    let weights = Vector::from_iterator(
        d,
        (0..d).map(|l| multilinear_eval(t, &vec![u.column(l).into_owned(); 4]).expect("order-4 tensor")),
    );
    let f = TensorSvdFactors { factors: vec![u; 4], weights };
    let residual = tensor_svd_residual(t, &f)? / scale(t.frobenius_norm());
    Ok((f, residual))
}

/// Recovers an orthogonal mixing from `X = PS + ε` with independent
/// non-Gaussian sources: whiten, estimate the fourth cumulant of the
/// whitened data, and decompose it as a symmetric tensor-SVD.
pub fn recover_mixing(x: &Matrix, cfg: &MixingRecoveryConfig) -> Result<MixingRecovery> {
    let d = x.nrows();
    let (z, whitening) = whiten(x)?;
    let t = fourth_cumulant_tensor(&z);
    let rel = |f: &TensorSvdFactors| -> Result<f64> { Ok(tensor_svd_residual(&t, f)? / scale(t.frobenius_norm())) };
    let (candidates, _) = symmetric_tensor_svd_candidates(&t, d)?;
    if candidates.weights.amax() < cfg.min_kurtosis {
        let residual = rel(&candidates)?;
        return Ok(MixingRecovery {
            mixing: candidates.factors[0].clone(),
            kurtosis: candidates.weights,
            whitening,
            reliable: false,
            method: RecoveryMethod::Unfolding,
            residual,
        });
    }
    let (f, method) = match recover_symmetric_tensor_svd_with(&t, d, &cfg.recovery) {
        Ok(f) => (f, RecoveryMethod::Unfolding),
        Err(TensorError::DegenerateSpectrum { .. } | TensorError::VerificationFailed { .. }) if cfg.contraction_fallback => {
            let (f, residual) = contraction_factors(&t, d, cfg.seed)?;
            if residual > cfg.recovery.verify_tol {
                return Err(TensorError::VerificationFailed { residual }.into());
            }
            (f, RecoveryMethod::Contraction)
        }
        Err(e) => return Err(e.into()),
    };
    let residual = rel(&f)?;
    Ok(MixingRecovery {
        mixing: f.factors[0].clone(),
        reliable: f.weights.amax() >= cfg.min_kurtosis,
        kurtosis: f.weights,
        whitening,
        method,
        residual,
    })
}

/// Principal angle in degrees between each true column and its matched
/// recovered column, matching greedily on `|cos|` (sign and order free).
pub fn column_angles(recovered: &Matrix, truth: &Matrix) -> Vec<f64> {
    let normalize = |m: &Matrix| {
        let mut m = m.clone();
        for mut c in m.column_iter_mut() {
            let n = c.norm();
            if n > 0.0 {
                c /= n;
            }
        }
        m
    };
    let (r, t) = (normalize(recovered), normalize(truth));
    let cos = (t.transpose() * &r).abs();
    let mut angles = vec![90.0; t.ncols()];
    let mut used_t = vec![false; t.ncols()];
    let mut used_r = vec![false; r.ncols()];
    for _ in 0..t.ncols().min(r.ncols()) {
        let mut best = (-1.0, 0, 0);
        for i in (0..t.ncols()).filter(|&i| !used_t[i]) {
            for j in (0..r.ncols()).filter(|&j| !used_r[j]) {
                if cos[(i, j)] > best.0 {
                    best = (cos[(i, j)], i, j);
                }
            }
        }
        let (c, i, j) = best;
        used_t[i] = true;
        used_r[j] = true;
        angles[i] = c.clamp(0.0, 1.0).acos().to_degrees();
    }
    angles
}

#[derive(Debug, Clone)]
pub struct PcaDemoReport {
    pub certificate: CertificateResult,
    pub safety: SafetyReport,
    pub rounds: usize,
    pub termination: Termination,
    pub final_point: Vector,
    pub nash: bool,
}

/// One batch `X⁽ⁿ⁾ = M_n·diag(c⁽ⁿ⁾)·S⁽ⁿ⁾` per mixing, with decorrelated sources
/// and seeded per-latent scales `c⁽ⁿ⁾ ∈ [0.5, 2)`. A single distribution is
/// used for every latent.
pub fn rescaled_batches(mixings: &[&Matrix], dists: &[SourceDist], samples: usize, seed: u64) -> Result<Vec<SignalBatch>> {
    mixings
        .iter()
        .enumerate()
        .map(|(n, m)| {
            let batch_seed = seed.wrapping_add(n as u64 * 0x9e37_79b9_7f4a_7c15);
            let per_latent = match dists {
                [d] => vec![*d; m.ncols()],
                ds if ds.len() == m.ncols() => ds.to_vec(),
                ds => return Err(Error::InvalidInput(format!("{} distributions for {} latents", ds.len(), m.ncols()))),
            };
            let s = decorrelate(&generate_mixed_sources(&per_latent, samples, batch_seed)?)?;
            // rescale each latent so batches are genuinely different
            let mut rng = stream(batch_seed, u64::MAX);
            let c = Vector::from_fn(m.ncols(), |_, _| rng.random_range(0.5..2.0));
            let data = Matrix::from_diagonal(&c) * &s.data;
            SignalBatch::new(*m * data, batch_seed, s.dist)
        })
        .collect()
}

/// Empirical safety, a seeded run of the dynamics and a Nash check on the end point.
pub fn run_pipeline(game: &Game, certificate: CertificateResult, samples: usize, seed: u64) -> Result<PcaDemoReport> {
    let safety = empirical_safety(game, &SamplerConfig::new(samples, seed).with_tol(1e-6))?;
    let w0 = sample_point(game.feasible(), game.dim(), &mut stream(seed, u64::MAX - 1));
    let cfg = DynamicsConfig::new(StepSchedule::default_for(game), 10_000).with_tol(1e-6);
    let traj = simulate(game, &w0, &cfg)?;
    let nash = nash_check(game, traj.last(), 1e-3, &ProbeConfig { seed, ..ProbeConfig::default() })?.is_nash();
    Ok(PcaDemoReport {
        certificate,
        safety,
        rounds: traj.rounds(),
        termination: traj.termination,
        final_point: traj.last().clone(),
        nash,
    })
}

/// `(A⁽ⁿ⁾, b⁽ⁿ⁾)` for a game whose losses are all quadratic.
pub fn game_quadratics(game: &Game) -> Result<(Vec<Matrix>, Vec<Vector>)> {
    game.losses()
        .iter()
        .map(|l| match l {
            LossSpec::Quadratic { a, b } => Ok((a.clone(), b.clone())),
            _ => Err(Error::InvalidInput("expected quadratic losses".into())),
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

/// One batch per mixing matrix, each with independently rescaled sources,
/// fed to the open PCA game. Identical orthogonal mixings give a certified,
/// safe game.
pub fn open_pca_demo(mixings: &[Matrix], dist: SourceDist, samples: usize, seed: u64) -> Result<PcaDemoReport> {
    let refs: Vec<&Matrix> = mixings.iter().collect();
    let batches = rescaled_batches(&refs, &[dist], samples, seed)?;
    let game = pca_game(&batches, true)?;
    let (mats, vecs) = game_quadratics(&game)?;
    let cert = certify_quadratic_open(&mats, &vecs, 1e-9)?;
    run_pipeline(&game, cert, 1000, seed)
}

/// Multi-view demo: one batch per row block of the model's mixing, each with
/// its own rescaled sources, fed to the block PCA game.
pub fn block_view_demo(model: &MixingModel, samples: usize, seed: u64) -> Result<PcaDemoReport> {
    let sizes = match model.structure() {
        MixingStructure::BlockView { sizes } => sizes.clone(),
        _ => vec![model.mixing().nrows()],
    };
    block_demo(model.mixing(), &sizes, model.dist, samples, seed)
}

/// Block demo for an arbitrary mixing split into `sizes` row blocks.
pub fn block_demo(mixing: &Matrix, sizes: &[usize], dist: SourceDist, samples: usize, seed: u64) -> Result<PcaDemoReport> {
    let refs = vec![mixing; sizes.len()];
    let batches = rescaled_batches(&refs, &[dist], samples, seed)?;
    let game = block_pca_game(&batches, sizes, true)?;
    let (mats, vecs) = game_quadratics(&game)?;
    let cert = certify_quadratic_block(&mats, &vecs, sizes, None, 1e-9)?;
    run_pipeline(&game, cert, 1000, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthonormalize;
    use crate::safety::{SafetyVerdict, Verdict};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rotation(deg: f64) -> Matrix {
        let (s, c) = deg.to_radians().sin_cos();
        Matrix::from_row_slice(2, 2, &[c, -s, s, c])
    }

    fn excess_kurtosis(row: &[f64]) -> f64 {
        let n = row.len() as f64;
        let m2 = row.iter().map(|x| x * x).sum::<f64>() / n;
        let m4 = row.iter().map(|x| x.powi(4)).sum::<f64>() / n;
        m4 / (m2 * m2) - 3.0
    }

    #[test]
    fn source_kurtosis() {
        for (dist, want) in [(SourceDist::Uniform, -1.2), (SourceDist::TwoPoint, -2.0)] {
            let s = generate_sources(1, 100_000, dist, 9).unwrap();
            let k = excess_kurtosis(s.data.row(0).transpose().as_slice());
            assert!((k - want).abs() < 0.05, "{dist}: {k}");
        }
        let one = generate_sources(2, 1, SourceDist::Laplace, 1).unwrap();
        assert_eq!(one.samples(), 1);
        assert!(one.data.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn sources_are_standardized_and_deterministic() {
        let a = generate_sources(3, 500, SourceDist::Laplace, 4).unwrap();
        let b = generate_sources(3, 500, SourceDist::Laplace, 4).unwrap();
        assert_eq!(a, b);
        for i in 0..3 {
            let r = a.data.row(i);
            assert!(r.mean().abs() < 1e-12);
            assert!((r.norm_squared() / 500.0 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mixing_examples() {
        let s = generate_sources(2, 1000, SourceDist::Uniform, 2).unwrap();
        let id = MixingModel::new(Matrix::identity(2, 2), MixingStructure::Orthogonal, SourceDist::Uniform, 0.0, 0).unwrap();
        assert_eq!(mix(&id, &s).unwrap().data, s.data);

        let p = rotation(30.0);
        let model = MixingModel::new(p.clone(), MixingStructure::Orthogonal, SourceDist::Uniform, 0.0, 0).unwrap();
        let x = mix(&model, &s).unwrap();
        let want = &p * covariance(&s.data, true) * p.transpose();
        assert!((covariance(&x.data, true) - want).norm() < 1e-12);

        assert!(MixingModel::new(Matrix::from_element(2, 2, 1.0), MixingStructure::Orthogonal, SourceDist::Uniform, 0.0, 0).is_err());
        assert!(mix(&model, &generate_sources(3, 10, SourceDist::Uniform, 0).unwrap()).is_err());
    }

    #[test]
    fn gaussian_noise_has_vanishing_cumulant() {
        let s = generate_sources(2, 100_000, SourceDist::Gaussian, 3).unwrap();
        let model = MixingModel::new(rotation(20.0), MixingStructure::Orthogonal, SourceDist::Gaussian, 0.5, 8).unwrap();
        let x = mix(&model, &s).unwrap();
        assert!(fourth_cumulant_tensor(&x.data).frobenius_norm() < 0.1);
    }

    #[test]
    fn covariance_examples() {
        let i3 = Matrix::identity(3, 3);
        assert_eq!(covariance(&i3, false), i3);
        let x = Matrix::from_column_slice(3, 1, &[1.0, 2.0, -1.0]);
        let c = covariance(&x, false);
        assert_eq!(c, &x * x.transpose());
        assert_eq!(c.rank(1e-12), 1);
        let s = generate_sources(4, 200, SourceDist::Laplace, 5).unwrap();
        let c = covariance(&s.data, false);
        assert!((&c - c.transpose()).norm() <= 1e-12);
        assert!(symmetric_eigen_sorted(&c).0.min() >= -1e-12);
    }

    #[test]
    fn cumulant_is_exactly_symmetric() {
        let s = generate_sources(3, 400, SourceDist::Laplace, 6).unwrap();
        let t = fourth_cumulant_tensor(&s.data);
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        let idx = [i, j, k, l];
                        let v = t.get(&idx);
                        for p in PERMUTATIONS_4 {
                            assert_eq!(v, t.get(&[idx[p[0]], idx[p[1]], idx[p[2]], idx[p[3]]]));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn cumulant_of_independent_sources_is_diagonal() {
        let dists = [SourceDist::Laplace, SourceDist::Uniform, SourceDist::TwoPoint];
        let s = generate_mixed_sources(&dists, 100_000, 7).unwrap();
        let t = fourth_cumulant_tensor(&s.data);
        for (i, d) in dists.iter().enumerate() {
            assert!((t.get(&[i, i, i, i]) - d.excess_kurtosis()).abs() < 0.15);
        }
        assert!(t.get(&[0, 1, 0, 1]).abs() < 0.05);
        assert!(t.get(&[0, 1, 2, 2]).abs() < 0.05);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = orthonormalize(&Matrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let model = MixingModel::new(p.clone(), MixingStructure::Orthogonal, SourceDist::Laplace, 0.0, 0).unwrap();
        let x = mix(&model, &s).unwrap();
        let kappa = Vector::from_iterator(3, dists.iter().map(|d| d.excess_kurtosis()));
        let pop = population_cumulant(&p, &kappa).unwrap();
        let est = fourth_cumulant_tensor(&x.data);
        assert!(est.distance(&pop).unwrap() / pop.frobenius_norm() <= 0.1);
    }

    #[test]
    fn whitening_gives_identity_covariance() {
        let s = generate_sources(3, 2000, SourceDist::Uniform, 8).unwrap();
        let m = Matrix::from_row_slice(3, 3, &[2.0, 0.3, 0.0, -0.5, 1.0, 0.2, 0.1, 0.0, 0.7]);
        let (z, _) = whiten(&(m * &s.data)).unwrap();
        assert!((covariance(&z, true) - Matrix::identity(3, 3)).norm() <= 1e-8);
        let degenerate = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(matches!(whiten(&degenerate), Err(Error::RankDeficientCovariance { .. })));
    }

    #[test]
    fn recovery_examples() {
        let cfg = MixingRecoveryConfig::default();
        let s = generate_sources(2, 100_000, SourceDist::TwoPoint, 10).unwrap();
        let r = recover_mixing(&s.data, &cfg).unwrap();
        assert!(r.reliable);
        assert!(column_angles(&r.mixing, &Matrix::identity(2, 2)).iter().all(|&a| a < 5.0));

        let s = generate_sources(2, 100_000, SourceDist::Uniform, 11).unwrap();
        let p = rotation(30.0);
        let x = &p * &s.data;
        let r = recover_mixing(&x, &cfg).unwrap();
        assert!(column_angles(&r.mixing, &p).iter().all(|&a| a < 5.0), "{:?}", column_angles(&r.mixing, &p));

        let s = generate_sources(2, 100_000, SourceDist::Gaussian, 12).unwrap();
        let r = recover_mixing(&s.data, &cfg).unwrap();
        assert!(!r.reliable);
        assert!(r.kurtosis.amax() < 0.25);
    }

    #[test]
    fn distinct_kurtosis_recovery_uses_unfolding() {
        let dists = [SourceDist::Laplace, SourceDist::Uniform, SourceDist::TwoPoint];
        let s = generate_mixed_sources(&dists, 100_000, 13).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let p = orthonormalize(&Matrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let r = recover_mixing(&(&p * &s.data), &MixingRecoveryConfig::default()).unwrap();
        assert_eq!(r.method, RecoveryMethod::Unfolding);
        assert!(column_angles(&r.mixing, &p).iter().all(|&a| a < 5.0));
    }

    #[test]
    fn csv_round_trip() {
        let s = generate_sources(2, 5, SourceDist::Laplace, 77).unwrap();
        let text = s.to_csv();
        assert!(text.starts_with("2,5,77,laplace\n"));
        assert_eq!(SignalBatch::from_csv(&text).unwrap(), s);
        assert!(SignalBatch::from_csv("2,5,1,uniform\n1,2\n").is_err());
    }

    #[test]
    fn open_pca_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let p = orthonormalize(&Matrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let shared = open_pca_demo(&[p.clone(), p.clone()], SourceDist::Laplace, 2000, 14).unwrap();
        assert_eq!(shared.certificate.verdict, Verdict::Certified);
        assert_eq!(shared.safety.verdict, SafetyVerdict::Safe);
        assert!(shared.safety.worst_value >= -1e-6);

        let q = orthonormalize(&Matrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let different = open_pca_demo(&[p, q], SourceDist::Laplace, 2000, 14).unwrap();
        assert!(!different.certificate.verdict.is_certified());

        let single = pca_game(&[generate_sources(2, 100, SourceDist::Uniform, 1).unwrap()], false).unwrap();
        assert_eq!(single.players(), 1);
    }

    #[test]
    fn block_view_examples() {
        let p_blocks = vec![rotation(25.0), rotation(-40.0)];
        let r_blocks = vec![
            Matrix::from_diagonal(&Vector::from_column_slice(&[1.0, 0.6])),
            Matrix::from_row_slice(2, 2, &[0.0, 1.3, 0.8, 0.0]),
        ];
        let model = MixingModel::block_view(&p_blocks, &r_blocks, SourceDist::Laplace, 0.0, 3).unwrap();
        let report = block_view_demo(&model, 2000, 3).unwrap();
        assert_eq!(report.certificate.verdict, Verdict::Certified, "{}", report.certificate.verdict);
        assert_eq!(report.safety.verdict, SafetyVerdict::Safe);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let general = Matrix::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0));
        assert!(MixingModel::new(general.clone(), MixingStructure::BlockView { sizes: vec![2, 2] }, SourceDist::Laplace, 0.0, 0).is_err());
        let report = block_demo(&general, &[2, 2], SourceDist::Laplace, 2000, 3).unwrap();
        assert!(!report.certificate.verdict.is_certified());

        let single = MixingModel::block_view(&p_blocks[..1], &r_blocks[..1], SourceDist::Laplace, 0.0, 3).unwrap();
        let one = block_view_demo(&single, 2000, 3).unwrap();
        let open = open_pca_demo(&[single.mixing().clone()], SourceDist::Laplace, 2000, 3).unwrap();
        assert_eq!(one.certificate.verdict.is_certified(), open.certificate.verdict.is_certified());
    }
}
