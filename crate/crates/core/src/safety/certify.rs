//! Sufficient-condition certificates. Each one verifies supplied or recovered
//! witnesses; `Refuted` means a certificate condition definitively fails,
//! `Inconclusive` means no witness was found and says nothing about safety.

use std::collections::VecDeque;
use std::fmt;

use crate::error::{Error, Result};
use crate::game::{joint_gram_residual, Game};
use crate::linalg::{
    is_psd, least_squares, min_symmetric_eigenvalue, scale, simultaneous_diagonalize_symmetric,
    simultaneous_svd_pair, symmetric_eigen_sorted, LinalgError, Matrix, Vector,
};
use crate::safety::factorization::{FactorizationSpec, InnerMap, OuterMap};
use crate::safety::SamplerConfig;
use crate::tensor::{
    multilinear_eval, recover_symmetric_tensor_svd, tensor_svd_residual, DenseTensor, TensorError, TensorSvdFactors,
};

#[derive(Debug, Clone, PartialEq)]
pub enum Refutation {
    Orthonormality { residual: f64 },
    Commutation { latent: usize, player: usize, residual: f64 },
    Reconstruction { player: usize, residual: f64 },
    /// `d^(m)_i · d^(n)_i < 0`.
    SignCondition { players: (usize, usize), coordinate: usize, product: f64 },
    SharedCenter { residual: f64 },
    Verification { tensor: usize, residual: f64 },
    /// Symmetric part of a cross product has a negative eigenvalue.
    Psd { which: &'static str, min_eig: f64 },
    Structure(String),
}

impl fmt::Display for Refutation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Orthonormality { residual } => write!(f, "latent bases are not jointly orthonormal (residual {residual:.3e})"),
            Self::Commutation { latent, player, residual } => {
                write!(f, "latent {latent} does not commute with player {player}'s projection (residual {residual:.3e})")
            }
            Self::Reconstruction { player, residual } => {
                write!(f, "factorization does not reproduce loss {player} (residual {residual:.3e})")
            }
            Self::SignCondition { players, coordinate, product } => write!(
                f,
                "players {} and {} disagree in sign at coordinate {coordinate} (product {product:.6e})",
                players.0, players.1
            ),
            Self::SharedCenter { residual } => write!(f, "no common center b (residual {residual:.3e})"),
            Self::Verification { tensor, residual } => {
                write!(f, "tensor {tensor} does not decompose over the shared factors (residual {residual:.3e})")
            }
            Self::Psd { which, min_eig } => write!(f, "{which} is not positive semidefinite (min eigenvalue {min_eig:.6e})"),
            Self::Structure(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Certified,
    /// Every check passed, but sign conditions were only sampled.
    CertifiedEmpirical,
    Refuted(Refutation),
    Inconclusive(String),
}

impl Verdict {
    pub fn is_certified(&self) -> bool {
        matches!(self, Self::Certified | Self::CertifiedEmpirical)
    }

    pub fn is_refuted(&self) -> bool {
        matches!(self, Self::Refuted(_))
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Certified => "certified",
            Self::CertifiedEmpirical => "certified-empirical",
            Self::Refuted(_) => "refuted",
            Self::Inconclusive(_) => "inconclusive",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Refuted(r) => write!(f, "refuted: {r}"),
            Self::Inconclusive(s) => write!(f, "inconclusive: {s}"),
            other => f.write_str(other.label()),
        }
    }
}

/// Whatever the certificate recovered or checked. Unused fields stay empty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Witness {
    pub p: Option<Matrix>,
    pub q: Option<Matrix>,
    pub r: Option<Matrix>,
    pub diagonals: Vec<Vector>,
    pub b: Option<Vector>,
    pub factors: Vec<Matrix>,
    /// Largest reconstruction residual seen.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateResult {
    pub verdict: Verdict,
    pub witness: Witness,
    pub notes: Vec<String>,
}

impl CertificateResult {
    fn new(verdict: Verdict, witness: Witness, notes: Vec<String>) -> Self {
        Self { verdict, witness, notes }
    }

    pub fn is_certified(&self) -> bool {
        self.verdict.is_certified()
    }
}

/// First coordinate where two diagonals disagree in sign, plus a note for
/// every coordinate whose product is exactly zero.
fn sign_check(diagonals: &[Vector], tol: f64, notes: &mut Vec<String>) -> Option<Refutation> {
    for m in 0..diagonals.len() {
        for n in m + 1..diagonals.len() {
            for (i, (a, b)) in diagonals[m].iter().zip(diagonals[n].iter()).enumerate() {
                let product = a * b;
                if product < -tol {
                    return Some(Refutation::SignCondition { players: (m, n), coordinate: i, product });
                }
                if product == 0.0 && (*a != 0.0 || *b != 0.0) {
                    notes.push(format!("players {m} and {n}: product is exactly zero at coordinate {i}"));
                }
            }
        }
    }
    None
}

/// Strong-typing certificate for `game` against a proposed factorization.
///
/// Checks, in order: joint orthonormality of the latent bases, commutation
/// of each `τ_l = P_lP_lᵀ` with every player projection, loss reconstruction
/// at the sampler's points, and sign agreement of `∂g_m/∂z_l · ∂g_n/∂z_l`.
/// Sign agreement is exact for linear outer maps and sampled otherwise.
pub fn certify_strong_typing(game: &Game, spec: &FactorizationSpec, sampler: &SamplerConfig, tol: f64) -> Result<CertificateResult> {
    if spec.dim() != game.dim() || spec.players() != game.players() {
        return Err(Error::InvalidInput(format!(
            "factorization is {}-dimensional with {} players, game is {}-dimensional with {}",
            spec.dim(),
            spec.players(),
            game.dim(),
            game.players()
        )));
    }
    let mut notes = Vec::new();
    let mut witness = Witness {
        factors: spec.bases().to_vec(),
        ..Witness::default()
    };
    let refuted = |r, w, notes| Ok(CertificateResult::new(Verdict::Refuted(r), w, notes));

    let residual = joint_gram_residual(spec.bases());
    if residual > tol {
        return refuted(Refutation::Orthonormality { residual }, witness, notes);
    }
    for (l, p) in spec.bases().iter().enumerate() {
        let tau = p * p.transpose();
        for n in 0..game.players() {
            let pi = game.player_projection(n).matrix();
            let residual = (&tau * pi - pi * &tau).norm();
            if residual > tol {
                return refuted(Refutation::Commutation { latent: l, player: n, residual }, witness, notes);
            }
        }
    }
    let points = sampler.points(game);
    for w in &points {
        for n in 0..game.players() {
            let want = game.loss_eval(n, w)?;
            let got = spec.loss(n, w);
            let residual = (want - got).abs();
            witness.residual = witness.residual.max(residual);
            if residual > tol * scale(want.abs()) {
                return refuted(Refutation::Reconstruction { player: n, residual }, witness, notes);
            }
        }
    }
    if !spec.has_black_box_outer() {
        let d: Vec<Vector> = spec
            .outer()
            .iter()
            .map(|g| match g {
                OuterMap::Linear(d) => d.clone(),
                OuterMap::BlackBox(_) => unreachable!("checked above"),
            })
            .collect();
        witness.diagonals = d;
        if let Some(r) = sign_check(&witness.diagonals, tol, &mut notes) {
            return refuted(r, witness, notes);
        }
        return Ok(CertificateResult::new(Verdict::Certified, witness, notes));
    }
    for w in &points {
        let z = spec.latent_values(w);
        let partials: Vec<Vector> = spec.outer().iter().map(|g| g.partials(&z)).collect();
        if let Some(r) = sign_check(&partials, tol, &mut Vec::new()) {
            return refuted(r, witness, notes);
        }
    }
    notes.push(format!("sign agreement sampled at {} points only", points.len()));
    Ok(CertificateResult::new(Verdict::CertifiedEmpirical, witness, notes))
}

/// Certificate for `ℓ_1 = xᵀAy`, `ℓ_2 = xᵀBy`: a simultaneous SVD with
/// `D_lE_l ≥ 0`. The PSD test on `AᵀB` and `BAᵀ` (which is exactly safety
/// for this family) is always run and reported.
pub fn certify_bilinear(a: &Matrix, b: &Matrix, tol: f64) -> Result<CertificateResult> {
    if a.shape() != b.shape() {
        return Err(Error::InvalidInput(format!("A is {:?}, B is {:?}", a.shape(), b.shape())));
    }
    let mut notes = Vec::new();
    let mut psd_failure = None;
    for (which, m) in [("AᵀB", a.transpose() * b), ("BAᵀ", b * a.transpose())] {
        let scaled_tol = tol * scale(m.norm());
        let min_eig = min_symmetric_eigenvalue(&m)?;
        if is_psd(&m, scaled_tol)? {
            notes.push(format!("{which} is positive semidefinite (min eigenvalue {min_eig:.6e})"));
        } else {
            notes.push(format!("{which} is not positive semidefinite (min eigenvalue {min_eig:.6e})"));
            psd_failure.get_or_insert(Refutation::Psd { which, min_eig });
        }
    }
    let pair = match simultaneous_svd_pair(a, b, tol) {
        Ok(p) => p,
        Err(LinalgError::IncompatiblePair { residual }) | Err(LinalgError::Alignment { residual }) => {
            let verdict = match psd_failure {
                Some(r) => Verdict::Refuted(r),
                None => Verdict::Inconclusive(format!(
                    "no simultaneous SVD (residual {residual:.3e}) although the PSD cross-check passes"
                )),
            };
            return Ok(CertificateResult::new(verdict, Witness::default(), notes));
        }
        Err(e) => return Err(e.into()),
    };
    let witness = Witness {
        p: Some(pair.p.clone()),
        q: Some(pair.q.clone()),
        diagonals: vec![pair.d.clone(), pair.e.clone()],
        residual: pair.residual,
        ..Witness::default()
    };
    if let Some(r) = sign_check(&witness.diagonals, tol, &mut notes) {
        return Ok(CertificateResult::new(Verdict::Refuted(r), witness, notes));
    }
    if let Some(r) = psd_failure {
        return Ok(CertificateResult::new(Verdict::Refuted(r), witness, notes));
    }
    Ok(CertificateResult::new(Verdict::Certified, witness, notes))
}

fn check_quadratic_inputs(mats: &[Matrix], vecs: &[Vector], tol: f64) -> Result<usize> {
    let first = mats.first().ok_or_else(|| Error::InvalidInput("no loss matrices".into()))?;
    let dim = first.nrows();
    if mats.len() != vecs.len() {
        return Err(Error::InvalidInput(format!("{} matrices but {} vectors", mats.len(), vecs.len())));
    }
    for (i, (m, v)) in mats.iter().zip(vecs).enumerate() {
        if m.shape() != (dim, dim) || v.len() != dim {
            return Err(Error::InvalidInput(format!("loss {i} does not have dimension {dim}")));
        }
        let residual = (m - m.transpose()).norm();
        if residual > tol * scale(m.norm()) {
            return Err(LinalgError::NotSymmetric { index: i, residual }.into());
        }
    }
    Ok(dim)
}

/// Least-squares common center: `b^(n) = A^(n)b` for every `n`. Returns the
/// solution and the largest relative residual.
fn common_center(mats: &[Matrix], vecs: &[Vector]) -> (Vector, f64) {
    let dim = mats[0].nrows();
    let mut stacked = Matrix::zeros(dim * mats.len(), dim);
    let mut rhs = Vector::zeros(dim * mats.len());
    for (k, (m, v)) in mats.iter().zip(vecs).enumerate() {
        stacked.rows_mut(k * dim, dim).copy_from(m);
        rhs.rows_mut(k * dim, dim).copy_from(v);
    }
    let b = least_squares(&stacked, &rhs);
    let residual = mats
        .iter()
        .zip(vecs)
        .map(|(m, v)| (m * &b - v).norm() / scale(v.norm().max(m.norm())))
        .fold(0.0, f64::max);
    (b, residual)
}

/// Open quadratic certificate: `A^(n) = P D^(n) Pᵀ` with a shared orthogonal
/// `P`, coordinatewise sign agreement of the `D^(n)`, and a common `b` with
/// `b^(n) = A^(n)b`. Losses are `½wᵀA^(n)w + wᵀb^(n)`.
pub fn certify_quadratic_open(mats: &[Matrix], vecs: &[Vector], tol: f64) -> Result<CertificateResult> {
    check_quadratic_inputs(mats, vecs, tol)?;
    let mut notes = Vec::new();
    let jd = match simultaneous_diagonalize_symmetric(mats, tol) {
        Ok(jd) => jd,
        Err(e @ (LinalgError::NotCommuting { .. } | LinalgError::JointDiagonalization { .. })) => {
            return Ok(CertificateResult::new(
                Verdict::Inconclusive(format!("no shared eigenbasis: {e}")),
                Witness::default(),
                notes,
            ));
        }
        Err(e) => return Err(e.into()),
    };
    let mut witness = Witness {
        p: Some(jd.basis.clone()),
        diagonals: jd.diagonals.clone(),
        residual: jd.residual,
        ..Witness::default()
    };
    if let Some(r) = sign_check(&witness.diagonals, tol, &mut notes) {
        return Ok(CertificateResult::new(Verdict::Refuted(r), witness, notes));
    }
    let (b, residual) = common_center(mats, vecs);
    witness.b = Some(b);
    if residual > tol {
        return Ok(CertificateResult::new(Verdict::Refuted(Refutation::SharedCenter { residual }), witness, notes));
    }
    witness.residual = witness.residual.max(residual);
    Ok(CertificateResult::new(Verdict::Certified, witness, notes))
}

/// Witness for the block quadratic certificate:
/// `A^(n) = P R D^(n) Rᵀ Pᵀ` and `b^(n) = A^(n)b`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWitness {
    /// `D×D` orthogonal, block diagonal.
    pub p: Matrix,
    /// `D×L`; each row has at most one nonzero and, within a block, each
    /// column is used by at most one row.
    pub r: Matrix,
    /// One length-`L` diagonal per player.
    pub diagonals: Vec<Vector>,
    pub b: Vector,
}

impl BlockWitness {
    pub fn reconstruct(&self, n: usize) -> Matrix {
        let pr = &self.p * &self.r;
        &pr * Matrix::from_diagonal(&self.diagonals[n]) * pr.transpose()
    }

    /// The strong-typing factorization behind the witness: one latent per
    /// used column of `R`, with basis the matching columns of `P`, inner map
    /// `s(s/2 + u_lᵀb)` for `s = r_lᵀx`, and linear outer maps `d^(n)`.
    pub fn factorization(&self) -> Result<FactorizationSpec> {
        let mut bases = Vec::new();
        let mut inner = Vec::new();
        let mut used = Vec::new();
        for l in 0..self.r.ncols() {
            let rows: Vec<usize> = (0..self.r.nrows()).filter(|&i| self.r[(i, l)] != 0.0).collect();
            if rows.is_empty() {
                continue;
            }
            let basis = Matrix::from_columns(&rows.iter().map(|&i| self.p.column(i)).collect::<Vec<_>>());
            let r = Vector::from_iterator(rows.len(), rows.iter().map(|&i| self.r[(i, l)]));
            let u = &basis * &r;
            inner.push(InnerMap::AffineQuadratic { r, offset: u.dot(&self.b) });
            bases.push(basis);
            used.push(l);
        }
        let outer = self
            .diagonals
            .iter()
            .map(|d| OuterMap::Linear(Vector::from_iterator(used.len(), used.iter().map(|&l| d[l]))))
            .collect();
        FactorizationSpec::new(bases, inner, outer)
    }
}

fn block_of(sizes: &[usize]) -> Vec<usize> {
    sizes.iter().enumerate().flat_map(|(k, &s)| std::iter::repeat_n(k, s)).collect()
}

/// Structural checks on `P` and `R`; `None` when they hold.
fn block_structure_violation(w: &BlockWitness, sizes: &[usize], tol: f64) -> Option<String> {
    let dim = w.p.nrows();
    let owner = block_of(sizes);
    if w.p.ncols() != dim || w.r.nrows() != dim {
        return Some(format!("P must be {dim}×{dim} and R must have {dim} rows"));
    }
    let gram = (w.p.transpose() * &w.p - Matrix::identity(dim, dim)).norm();
    if gram > tol {
        return Some(format!("P is not orthogonal (residual {gram:.3e})"));
    }
    for i in 0..dim {
        for j in 0..dim {
            if owner[i] != owner[j] && w.p[(i, j)].abs() > tol {
                return Some(format!("P has an off-block entry at ({i}, {j})"));
            }
        }
    }
    for i in 0..dim {
        let nz = (0..w.r.ncols()).filter(|&l| w.r[(i, l)] != 0.0).count();
        if nz > 1 {
            return Some(format!("row {i} of R has {nz} nonzero entries"));
        }
    }
    for l in 0..w.r.ncols() {
        for k in 0..sizes.len() {
            let rows = (0..dim).filter(|&i| owner[i] == k && w.r[(i, l)] != 0.0).count();
            if rows > 1 {
                return Some(format!("column {l} of R is used twice inside block {k}"));
            }
        }
    }
    None
}

fn verify_block_witness(
    mats: &[Matrix],
    vecs: &[Vector],
    sizes: &[usize],
    w: BlockWitness,
    tol: f64,
    mut notes: Vec<String>,
) -> CertificateResult {
    let mut witness = Witness {
        p: Some(w.p.clone()),
        r: Some(w.r.clone()),
        diagonals: w.diagonals.clone(),
        b: Some(w.b.clone()),
        ..Witness::default()
    };
    let refuted = |r, witness, notes| CertificateResult::new(Verdict::Refuted(r), witness, notes);
    if w.diagonals.len() != mats.len() || w.diagonals.iter().any(|d| d.len() != w.r.ncols()) || w.b.len() != w.p.nrows() {
        return refuted(Refutation::Structure("witness shapes do not match the game".into()), witness, notes);
    }
    if let Some(s) = block_structure_violation(&w, sizes, tol) {
        return refuted(Refutation::Structure(s), witness, notes);
    }
    if let Some(r) = sign_check(&w.diagonals, tol, &mut notes) {
        return refuted(r, witness, notes);
    }
    for (n, (a, bn)) in mats.iter().zip(vecs).enumerate() {
        let residual = (w.reconstruct(n) - a).norm() / scale(a.norm());
        witness.residual = witness.residual.max(residual);
        if residual > tol {
            return refuted(Refutation::Reconstruction { player: n, residual }, witness, notes);
        }
        let residual = (a * &w.b - bn).norm() / scale(bn.norm().max(a.norm()));
        if residual > tol {
            return refuted(Refutation::SharedCenter { residual }, witness, notes);
        }
        witness.residual = witness.residual.max(residual);
    }
    CertificateResult::new(Verdict::Certified, witness, notes)
}

/// Recovers a block witness when each block's diagonal sub-matrices are
/// jointly diagonalizable and the coupling pattern in that basis is rank one
/// per latent. `Err(reason)` otherwise.
fn search_block_witness(mats: &[Matrix], vecs: &[Vector], sizes: &[usize], tol: f64) -> std::result::Result<BlockWitness, String> {
    let dim = mats[0].nrows();
    let mut p = Matrix::zeros(dim, dim);
    let mut start = 0;
    for (k, &s) in sizes.iter().enumerate() {
        let subs: Vec<Matrix> = mats.iter().map(|a| a.view((start, start), (s, s)).into_owned()).collect();
        let jd = simultaneous_diagonalize_symmetric(&subs, tol).map_err(|e| format!("block {k}: {e}"))?;
        p.view_mut((start, start), (s, s)).copy_from(&jd.basis);
        start += s;
    }
    let c: Vec<Matrix> = mats.iter().map(|a| p.transpose() * a * &p).collect();
    let cutoff = tol * scale(c.iter().map(|m| m.norm()).fold(0.0, f64::max));
    let linked = |i: usize, j: usize| c.iter().any(|m| m[(i, j)].abs() > cutoff);

    let owner = block_of(sizes);
    let mut group = vec![usize::MAX; dim];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for root in 0..dim {
        if group[root] != usize::MAX {
            continue;
        }
        let id = groups.len();
        group[root] = id;
        let mut members = vec![root];
        let mut queue = VecDeque::from([root]);
        while let Some(i) = queue.pop_front() {
            for j in 0..dim {
                if group[j] == usize::MAX && linked(i, j) {
                    group[j] = id;
                    members.push(j);
                    queue.push_back(j);
                }
            }
        }
        members.sort_unstable();
        for pair in members.windows(2) {
            if owner[pair[0]] == owner[pair[1]] {
                return Err(format!("coordinates {} and {} of one block share a latent", pair[0], pair[1]));
            }
        }
        groups.push(members);
    }

    let l = groups.len();
    let mut r = Matrix::zeros(dim, l);
    let mut diagonals = vec![Vector::zeros(l); mats.len()];
    for (g, members) in groups.iter().enumerate() {
        let sub = |m: &Matrix| Matrix::from_fn(members.len(), members.len(), |a, b| m[(members[a], members[b])]);
        let subs: Vec<Matrix> = c.iter().map(sub).collect();
        let lead = subs
            .iter()
            .max_by(|x, y| x.norm().total_cmp(&y.norm()))
            .expect("at least one player");
        let (vals, vecs_) = symmetric_eigen_sorted(lead);
        let top = if vals[0].abs() >= vals[vals.len() - 1].abs() { 0 } else { vals.len() - 1 };
        let mut u: Vector = vecs_.column(top).into_owned();
        if u.iter().find(|x| x.abs() > 1e-12).is_some_and(|&x| x < 0.0) {
            u = -u;
        }
        for (n, s) in subs.iter().enumerate() {
            let d = u.dot(&(s * &u));
            let residual = (s - &u * u.transpose() * d).norm();
            if residual > cutoff {
                return Err(format!("latent {g} is not rank one for player {n} (residual {residual:.3e})"));
            }
            diagonals[n][g] = d;
        }
        for (a, &i) in members.iter().enumerate() {
            r[(i, g)] = if u[a].abs() > 1e-12 { u[a] } else { 0.0 };
        }
        if members.len() == 1 {
            r[(members[0], g)] = 1.0;
        }
    }
    let (b, _) = common_center(mats, vecs);
    Ok(BlockWitness { p, r, diagonals, b })
}

/// Block quadratic certificate. Verifies `witness` when given; otherwise
/// attempts recovery from per-block joint diagonalization and reports
/// `Inconclusive` when that fails.
pub fn certify_quadratic_block(
    mats: &[Matrix],
    vecs: &[Vector],
    sizes: &[usize],
    witness: Option<BlockWitness>,
    tol: f64,
) -> Result<CertificateResult> {
    let dim = check_quadratic_inputs(mats, vecs, tol)?;
    if sizes.iter().sum::<usize>() != dim || sizes.contains(&0) {
        return Err(Error::InvalidInput(format!("block sizes {sizes:?} do not partition dimension {dim}")));
    }
    let w = match witness {
        Some(w) => w,
        None => match search_block_witness(mats, vecs, sizes, tol) {
            Ok(w) => w,
            Err(reason) => {
                return Ok(CertificateResult::new(Verdict::Inconclusive(reason), Witness::default(), Vec::new()));
            }
        },
    };
    Ok(verify_block_witness(mats, vecs, sizes, w, tol, Vec::new()))
}

/// Multilinear certificate: every tensor decomposes over the shared
/// orthonormal factors with its own weights, and the weights agree in sign
/// coordinatewise.
pub fn certify_multilinear(tensors: &[DenseTensor], factors: &[Matrix], diagonals: &[Vector], tol: f64) -> Result<CertificateResult> {
    if tensors.len() != diagonals.len() || tensors.is_empty() {
        return Err(Error::InvalidInput(format!("{} tensors but {} weight vectors", tensors.len(), diagonals.len())));
    }
    let mut notes = Vec::new();
    let mut witness = Witness {
        factors: factors.to_vec(),
        diagonals: diagonals.to_vec(),
        ..Witness::default()
    };
    for (k, (t, d)) in tensors.iter().zip(diagonals).enumerate() {
        let f = TensorSvdFactors {
            factors: factors.to_vec(),
            weights: d.clone(),
        };
        match f.check(tol) {
            Ok(()) => {}
            Err(TensorError::NotOrthonormal { residual, .. }) => {
                return Ok(CertificateResult::new(Verdict::Refuted(Refutation::Orthonormality { residual }), witness, notes));
            }
            Err(e) => return Err(e.into()),
        }
        let residual = tensor_svd_residual(t, &f)? / scale(t.frobenius_norm());
        witness.residual = witness.residual.max(residual);
        if residual > tol {
            return Ok(CertificateResult::new(Verdict::Refuted(Refutation::Verification { tensor: k, residual }), witness, notes));
        }
    }
    if let Some(r) = sign_check(diagonals, tol, &mut notes) {
        return Ok(CertificateResult::new(Verdict::Refuted(r), witness, notes));
    }
    Ok(CertificateResult::new(Verdict::Certified, witness, notes))
}

/// Multilinear certificate for symmetric tensors without a supplied witness:
/// factors come from the first tensor, weights of the rest from their core
/// entries along the shared factors.
pub fn certify_multilinear_symmetric(tensors: &[DenseTensor], rank: usize, tol: f64) -> Result<CertificateResult> {
    let first = tensors.first().ok_or_else(|| Error::InvalidInput("no tensors".into()))?;
    let f = match recover_symmetric_tensor_svd(first, rank) {
        Ok(f) => f,
        Err(e @ (TensorError::DegenerateSpectrum { .. } | TensorError::VerificationFailed { .. })) => {
            return Ok(CertificateResult::new(
                Verdict::Inconclusive(format!("no factors recovered: {e}")),
                Witness::default(),
                Vec::new(),
            ));
        }
        Err(e) => return Err(e.into()),
    };
    let u = &f.factors[0];
    let diagonals = tensors
        .iter()
        .map(|t| {
            (0..rank)
                .map(|l| multilinear_eval(t, &vec![u.column(l).into_owned(); t.order()]))
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map(Vector::from_vec)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    certify_multilinear(tensors, &f.factors, &diagonals, tol)
}
