//! Safety evaluation: pairwise projected-gradient inner products, seeded
//! empirical sweeps, potential-game checks and factorization certificates.

pub mod certify;
pub mod factorization;

use std::collections::VecDeque;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::game::{FeasibleSet, Game, LossSpec};
use crate::linalg::{scale, Matrix, Vector};
use crate::sampling::{sample_point, stream, unit_vector};
use crate::tensor::{hosvd, n_mode_product, partial_contract, DenseTensor};

pub use certify::{
    certify_bilinear, certify_multilinear, certify_multilinear_symmetric, certify_quadratic_block, certify_quadratic_open, certify_strong_typing,
    BlockWitness, CertificateResult, Refutation, Verdict, Witness,
};
pub use factorization::{FactorizationSpec, InnerMap, OuterMap};

/// `M[m][n] = ⟨π_{ρ(m)} ∇ℓ_m(w), ∇ℓ_n(w)⟩`.
pub fn pairwise_safety_at(game: &Game, w: &Vector) -> Result<Matrix> {
    let grads = game.gradients(w)?;
    let n = game.players();
    let mut out = Matrix::zeros(n, n);
    for m in 0..n {
        let pg = game.player_projection(m).apply(&grads[m]);
        for k in 0..n {
            out[(m, k)] = pg.dot(&grads[k]);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Region to sample; the game's feasible set when `None`.
    pub region: Option<FeasibleSet>,
    pub count: usize,
    pub seed: u64,
    /// A pair minimum below `-tol` is a violation.
    pub tol: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            region: None,
            count: 1000,
            seed: 0,
            tol: 1e-9,
        }
    }
}

impl SamplerConfig {
    pub fn new(count: usize, seed: u64) -> Self {
        Self {
            count,
            seed,
            ..Self::default()
        }
    }

    pub fn with_region(mut self, region: FeasibleSet) -> Self {
        self.region = Some(region);
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    /// Sample `index`, drawn from its own stream.
    pub fn point(&self, game: &Game, index: usize) -> Vector {
        let region = self.region.as_ref().unwrap_or(game.feasible());
        sample_point(region, game.dim(), &mut stream(self.seed, index as u64))
    }

    pub fn points(&self, game: &Game) -> Vec<Vector> {
        (0..self.count).map(|i| self.point(game, i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SafetyVerdict {
    Safe,
    ViolationFound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafetyReport {
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
    /// Per-pair minimum over samples.
    pub pair_min: Matrix,
    /// Smallest entry overall, the pair `(m, n)` attaining it and the sample.
    pub worst_value: f64,
    pub worst_pair: (usize, usize),
    pub worst_index: usize,
    pub worst_point: Vector,
    pub verdict: SafetyVerdict,
}

impl SafetyReport {
    pub fn is_safe(&self) -> bool {
        self.verdict == SafetyVerdict::Safe
    }
}

/// Evaluates [`pairwise_safety_at`] at seeded samples.
///
/// Fans out over rayon when every loss allows concurrent evaluation. The
/// reduction keeps the lowest sample index on ties, so the report does not
/// depend on scheduling.
pub fn empirical_safety(game: &Game, cfg: &SamplerConfig) -> Result<SafetyReport> {
    if cfg.count == 0 {
        return Err(Error::InvalidInput("sample count must be positive".into()));
    }
    let eval = |i: usize| -> Result<(Vector, Matrix)> {
        let w = cfg.point(game, i);
        let m = pairwise_safety_at(game, &w)?;
        Ok((w, m))
    };
    let rows: Vec<(Vector, Matrix)> = if game.concurrent() {
        (0..cfg.count).into_par_iter().map(eval).collect::<Result<_>>()?
    } else {
        (0..cfg.count).map(eval).collect::<Result<_>>()?
    };
    let n = game.players();
    let mut pair_min = Matrix::from_element(n, n, f64::INFINITY);
    let mut worst = (f64::INFINITY, (0, 0), 0usize);
    for (i, (_, m)) in rows.iter().enumerate() {
        for a in 0..n {
            for b in 0..n {
                let v = m[(a, b)];
                if v < pair_min[(a, b)] {
                    pair_min[(a, b)] = v;
                }
                if v < worst.0 {
                    worst = (v, (a, b), i);
                }
            }
        }
    }
    let verdict = if worst.0 < -cfg.tol {
        SafetyVerdict::ViolationFound
    } else {
        SafetyVerdict::Safe
    };
    Ok(SafetyReport {
        samples: cfg.count,
        seed: cfg.seed,
        tol: cfg.tol,
        pair_min,
        worst_value: worst.0,
        worst_pair: worst.1,
        worst_index: worst.2,
        worst_point: rows[worst.2].0.clone(),
        verdict,
    })
}

/// Weighted potential `Φ(w) = ½wᵀQw + wᵀc` with weights `α`.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialVerdict {
    IsPotential { weights: Vector, q: Matrix, c: Vector },
    NotPotential(String),
}

impl PotentialVerdict {
    pub fn is_potential(&self) -> bool {
        matches!(self, Self::IsPotential { .. })
    }
}

/// Closed-form test for `ℓ_1 = xᵀAy`, `ℓ_2 = xᵀBy`: a weighted potential
/// exists iff `B = cA` with `c > 0`, and then `Φ = ℓ_1`, `α = (1, c)`.
pub fn potential_check_bilinear(a: &Matrix, b: &Matrix, tol: f64) -> Result<PotentialVerdict> {
    if a.shape() != b.shape() {
        return Err(Error::InvalidInput(format!("A is {:?}, B is {:?}", a.shape(), b.shape())));
    }
    let na = a.norm_squared();
    if na == 0.0 {
        return Ok(if b.norm() <= tol {
            bilinear_potential(a, 1.0)
        } else {
            PotentialVerdict::NotPotential("A vanishes but B does not".into())
        });
    }
    let c = a.dot(b) / na;
    let residual = (b - a * c).norm();
    if residual > tol * scale(b.norm()) {
        return Ok(PotentialVerdict::NotPotential(format!(
            "B is not a multiple of A (residual {residual:.3e})"
        )));
    }
    if c <= 0.0 {
        return Ok(PotentialVerdict::NotPotential(format!("B = {c}·A with nonpositive factor")));
    }
    Ok(bilinear_potential(a, c))
}

fn bilinear_potential(a: &Matrix, c: f64) -> PotentialVerdict {
    let (r, k) = a.shape();
    let mut q = Matrix::zeros(r + k, r + k);
    q.view_mut((0, r), (r, k)).copy_from(a);
    q.view_mut((r, 0), (k, r)).copy_from(&a.transpose());
    PotentialVerdict::IsPotential {
        weights: Vector::from_vec(vec![1.0, c]),
        q,
        c: Vector::zeros(r + k),
    }
}

/// `(A, b)` with `ℓ(w) = ½wᵀAw + wᵀb` for quadratic and bilinear losses.
fn quadratic_form(loss: &LossSpec, dim: usize) -> Option<(Matrix, Vector)> {
    match loss {
        LossSpec::Quadratic { a, b } => Some((a.clone(), b.clone())),
        LossSpec::Bilinear { .. } => Some((loss.hessian(&Vector::zeros(dim)), Vector::zeros(dim))),
        _ => None,
    }
}

/// Exact weighted-potential test for block games whose losses are quadratic
/// (or bilinear). Writing `A^(n)[m,n]` for the coupling block between players
/// `m` and `n`, a potential exists iff `A^(n)[m,n] = (α_n/α_m)·A^(m)[m,n]`
/// for all pairs with some positive `α`; the ratios are propagated over the
/// coupling graph and checked for consistency.
pub fn potential_check_quadratic(game: &Game, tol: f64) -> Result<PotentialVerdict> {
    let blocks = match (game.is_block_game(), game.types().blocks()) {
        (true, Some(b)) => b.to_vec(),
        _ => return Err(Error::InvalidInput("potential check needs a coordinate block game".into())),
    };
    let dim = game.dim();
    let forms: Vec<(Matrix, Vector)> = game
        .losses()
        .iter()
        .map(|l| quadratic_form(l, dim))
        .collect::<Option<_>>()
        .ok_or_else(|| Error::InvalidInput("potential check supports quadratic and bilinear losses only".into()))?;
    let n = blocks.len();
    let block = |a: &Matrix, m: usize, k: usize| -> Matrix {
        a.view((blocks[m].start, blocks[k].start), (blocks[m].len(), blocks[k].len())).into_owned()
    };
    let mut alpha: Vec<Option<f64>> = vec![None; n];
    for root in 0..n {
        if alpha[root].is_some() {
            continue;
        }
        alpha[root] = Some(1.0);
        let mut queue = VecDeque::from([root]);
        while let Some(m) = queue.pop_front() {
            for k in 0..n {
                if k == m {
                    continue;
                }
                let own = block(&forms[m].0, m, k);
                let other = block(&forms[k].0, m, k);
                let (no, nt) = (own.norm(), other.norm());
                let small = tol * scale(no.max(nt));
                if no <= small && nt <= small {
                    continue;
                }
                if no <= small || nt <= small {
                    return Ok(PotentialVerdict::NotPotential(format!(
                        "players {m} and {k}: only one loss couples their blocks"
                    )));
                }
                let ratio = own.dot(&other) / (no * no);
                if ratio <= 0.0 || (&other - &own * ratio).norm() > small {
                    return Ok(PotentialVerdict::NotPotential(format!(
                        "players {m} and {k}: coupling blocks are not positively proportional"
                    )));
                }
                let am = alpha[m].expect("visited");
                let want = am * ratio;
                match alpha[k] {
                    None => {
                        alpha[k] = Some(want);
                        queue.push_back(k);
                    }
                    Some(ak) if (ak - want).abs() > tol * scale(ak) => {
                        return Ok(PotentialVerdict::NotPotential(format!(
                            "inconsistent weights around player {k}: {ak} vs {want}"
                        )));
                    }
                    Some(_) => {}
                }
            }
        }
    }
    let weights = Vector::from_iterator(n, alpha.iter().map(|a| a.expect("all visited")));
    let mut q = Matrix::zeros(dim, dim);
    let mut c = Vector::zeros(dim);
    for (k, r) in blocks.iter().enumerate() {
        let (a, b) = &forms[k];
        let rows = a.rows(r.start, r.len()) / weights[k];
        q.rows_mut(r.start, r.len()).copy_from(&rows);
        c.rows_mut(r.start, r.len()).copy_from(&(b.rows(r.start, r.len()) / weights[k]));
    }
    let q = (&q + q.transpose()) * 0.5;
    Ok(PotentialVerdict::IsPotential { weights, q, c })
}

/// Two tensors sharing HOSVD factor matrices together with a point where
/// their multilinear game violates safety.
#[derive(Debug, Clone)]
pub struct HosvdWitness {
    pub a: DenseTensor,
    pub b: DenseTensor,
    pub factors: Vec<Matrix>,
    pub point: Vec<Vector>,
    pub player: usize,
    /// `⟨π_n ∇ℓ_A, ∇ℓ_B⟩` at the point.
    pub value: f64,
    pub trial: usize,
}

/// Searches `points` random unit actions per block for a player `n` with
/// `A[w_n̂]ᵀ B[w_n̂] < -tol`.
pub fn search_violation(a: &DenseTensor, b: &DenseTensor, seed: u64, points: usize, tol: f64) -> Option<(Vec<Vector>, usize, f64)> {
    let order = a.order();
    for i in 0..points {
        let mut rng = stream(seed, i as u64);
        let acts: Vec<Vector> = a.dims().iter().map(|&d| unit_vector(&mut rng, d)).collect();
        for n in 0..order {
            let others: Vec<Vector> = acts.iter().enumerate().filter(|(m, _)| *m != n).map(|(_, v)| v.clone()).collect();
            let ga = partial_contract(a, n, &others).expect("matching dims");
            let gb = partial_contract(b, n, &others).expect("matching dims");
            for (x, y) in [(&ga, &gb), (&gb, &ga)] {
                let v = x.dot(y);
                if v < -tol {
                    return Some((acts, n, v));
                }
            }
        }
    }
    None
}

/// Randomized search for a pair of tensors with identical HOSVD factor
/// matrices whose game is unsafe. Each trial draws a random tensor `A`,
/// takes its HOSVD factors `U`, and sets `B = S' ×_0 U_0 ··· ×_{N−1} U_{N−1}`
/// where `S'` is the (all-orthogonal) HOSVD core of an independent random
/// tensor, so both tensors decompose over the same `U`.
pub fn hosvd_insufficiency_search(dims: &[usize], seed: u64, trials: usize) -> Option<HosvdWitness> {
    for trial in 0..trials {
        let mut rng = stream(seed, trial as u64);
        let a = DenseTensor::from_fn(dims, |_| rng.random_range(-1.0..1.0));
        let other = DenseTensor::from_fn(dims, |_| rng.random_range(-1.0..1.0));
        let ha = hosvd(&a);
        let core = hosvd(&other).core;
        let mut b = core;
        for (n, u) in ha.factors.iter().enumerate() {
            b = n_mode_product(&b, u, n).expect("square factors");
        }
        if let Some((point, player, value)) = search_violation(&a, &b, seed ^ (trial as u64).wrapping_mul(0x9e37_79b9), 16, 1e-9) {
            return Some(HosvdWitness {
                a,
                b,
                factors: ha.factors,
                point,
                player,
                value,
                trial,
            });
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery;
    use crate::linalg::orthonormalize;
    use crate::tensor::{compose_tensor_svd, TensorSvdFactors};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    #[test]
    fn pairwise_examples() {
        let m = pairwise_safety_at(&gallery::ex3(), &v(&[0.2, -0.7])).unwrap();
        assert_eq!(m, Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]));
        let m = pairwise_safety_at(&gallery::ex4(), &v(&[1.0, 1.0])).unwrap();
        assert_eq!(m[(0, 1)], -1.0);
        let m = pairwise_safety_at(&gallery::ex6(), &v(&[0.0, 1.0])).unwrap();
        assert_eq!(m[(0, 1)], -8.0);
    }

    #[test]
    fn empirical_examples() {
        let cfg = SamplerConfig::new(1000, 42);
        assert!(empirical_safety(&gallery::ex3(), &cfg).unwrap().is_safe());
        let r = empirical_safety(&gallery::ex4(), &cfg).unwrap();
        assert_eq!(r.verdict, SafetyVerdict::ViolationFound);
        let region = FeasibleSet::Box { lo: v(&[-1.0, 0.0]), hi: v(&[1.0, 9.0]) };
        let r = empirical_safety(&gallery::ex6(), &cfg.clone().with_region(region)).unwrap();
        assert_eq!(r.verdict, SafetyVerdict::ViolationFound);
        assert!(r.worst_point[1] > 0.0 && r.worst_point[1] < 9.0);
    }

    #[test]
    fn empirical_is_deterministic_and_diagonal_nonnegative() {
        let cfg = SamplerConfig::new(300, 7);
        let a = empirical_safety(&gallery::ex4(), &cfg).unwrap();
        let b = empirical_safety(&gallery::ex4(), &cfg).unwrap();
        assert_eq!(a, b);
        for i in 0..2 {
            assert!(a.pair_min[(i, i)] >= 0.0);
        }
    }

    #[test]
    fn serial_and_parallel_agree() {
        let parallel = gallery::ex4();
        let serial = Game::block(
            &[1, 1],
            vec![
                LossSpec::BlackBox(std::sync::Arc::new(Serial(|w: &Vector| w[0] * w[1]))),
                LossSpec::BlackBox(std::sync::Arc::new(Serial(|w: &Vector| -w[0] * w[1]))),
            ],
            FeasibleSet::Unconstrained,
        )
        .unwrap();
        assert!(!serial.concurrent());
        let cfg = SamplerConfig::new(200, 3);
        let a = empirical_safety(&parallel, &cfg).unwrap();
        let b = empirical_safety(&serial, &cfg).unwrap();
        assert_eq!(a.worst_index, b.worst_index);
        assert_eq!(a.worst_point, b.worst_point);
    }

    struct Serial<F>(F);
    impl<F: Fn(&Vector) -> f64 + Send + Sync> crate::game::BlackBoxLoss for Serial<F> {
        fn eval(&self, w: &Vector) -> f64 {
            (self.0)(w)
        }
        fn concurrent(&self) -> bool {
            false
        }
    }

    #[test]
    fn potential_bilinear_examples() {
        let a = Matrix::from_diagonal(&v(&[1.0, 2.0]));
        let b = Matrix::from_diagonal(&v(&[3.0, 4.0]));
        assert!(!potential_check_bilinear(&a, &b, 1e-9).unwrap().is_potential());
        match potential_check_bilinear(&a, &(&a * 2.0), 1e-9).unwrap() {
            PotentialVerdict::IsPotential { weights, .. } => assert_eq!(weights.as_slice(), &[1.0, 2.0]),
            other => panic!("{other:?}"),
        }
        assert!(!potential_check_bilinear(&a, &(&a * -1.0), 1e-9).unwrap().is_potential());
    }

    #[test]
    fn potential_quadratic_examples() {
        match potential_check_quadratic(&gallery::ex6(), 1e-9).unwrap() {
            PotentialVerdict::IsPotential { weights, q, c } => {
                assert_eq!(weights.as_slice(), &[1.0, 1.0]);
                assert_eq!(q, Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
                assert_eq!(c, Vector::zeros(2));
            }
            other => panic!("{other:?}"),
        }
        assert!(!potential_check_quadratic(&gallery::ex5(), 1e-9).unwrap().is_potential());
        assert!(!potential_check_quadratic(&gallery::ex4(), 1e-9).unwrap().is_potential());
        assert!(potential_check_quadratic(&gallery::ex3(), 1e-9).unwrap().is_potential());
    }

    /// Unilateral changes of each loss match weighted changes of the potential.
    #[test]
    fn potential_quadratic_definition_holds() {
        let game = gallery::ex6();
        let PotentialVerdict::IsPotential { weights, q, c } = potential_check_quadratic(&game, 1e-9).unwrap() else {
            panic!("ex6 is a potential game")
        };
        let phi = |w: &Vector| 0.5 * w.dot(&(&q * w)) + w.dot(&c);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let w = v(&[rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
            let step = v(&[rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
            for n in 0..2 {
                let moved = &w + game.player_projection(n).apply(&step);
                let dl = game.loss_eval(n, &w).unwrap() - game.loss_eval(n, &moved).unwrap();
                let dphi = phi(&w) - phi(&moved);
                assert!((dl - weights[n] * dphi).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hosvd_search_finds_witness() {
        let w = hosvd_insufficiency_search(&[2, 2, 2], 2024, 10_000).expect("witness");
        assert!(w.value < -1e-9);
        // both tensors decompose over the witness factors
        let hb = hosvd(&w.b);
        for (u, ub) in w.factors.iter().zip(&hb.factors) {
            assert!((u.transpose() * ub).abs().diagonal().iter().all(|x| (x - 1.0).abs() < 1e-8));
        }
        // regression fixture: the first trial already violates
        assert_eq!(w.trial, 0);
    }

    #[test]
    fn shared_tensor_svd_never_violates() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u: Vec<Matrix> = (0..3)
            .map(|_| orthonormalize(&Matrix::from_fn(2, 2, |_, _| rng.random_range(-1.0..1.0))).unwrap())
            .collect();
        let a = compose_tensor_svd(&TensorSvdFactors { factors: u.clone(), weights: v(&[1.0, 2.0]) }).unwrap();
        let b = compose_tensor_svd(&TensorSvdFactors { factors: u, weights: v(&[3.0, 0.5]) }).unwrap();
        assert!(search_violation(&a, &b, 5, 2000, 1e-12).is_none());
        let zero = DenseTensor::zeros(&[2, 2, 2]);
        assert!(search_violation(&a, &zero, 5, 2000, 1e-12).is_none());
    }
}
