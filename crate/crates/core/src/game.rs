//! Games: a type structure of orthogonal projections, a player assignment,
//! one loss per player and a feasible set.

use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use thiserror::Error;

use crate::linalg::{gram_residual, LinalgError, Matrix, Projection, Vector};
use crate::safety::factorization::FactorizationSpec;
use crate::tensor::{multilinear_eval, partial_contract, DenseTensor, TensorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("projections {first} and {second} do not annihilate: ‖π_r π_s‖ = {residual:.3e}")]
    NotAnnihilating {
        first: usize,
        second: usize,
        residual: f64,
    },
    #[error("projections do not sum to the identity: residual {residual:.3e}")]
    Incomplete { residual: f64 },
    #[error("player {player} is assigned to projection {projection}, but the type has rank {rank}")]
    InvalidAssignment {
        player: usize,
        projection: usize,
        rank: usize,
    },
    #[error("player {player} does not exist (game has {players})")]
    InvalidPlayer { player: usize, players: usize },
    #[error("invalid feasible set: {0}")]
    InvalidFeasibleSet(String),
    #[error("loss of player {player} is not finite at the evaluated point")]
    NonFiniteLoss { player: usize },
    #[error("operation requires a block game (one projection per player, ρ(n) = n)")]
    NotBlockGame,
    #[error("invalid loss: {0}")]
    InvalidLoss(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, GameError>;

/// Mutually annihilating orthogonal projections summing to the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeStructure {
    dim: usize,
    projections: Vec<Projection>,
    blocks: Option<Vec<Range<usize>>>,
}

impl TypeStructure {
    /// One coordinate block per entry of `sizes`.
    pub fn block(sizes: &[usize]) -> Self {
        let dim = sizes.iter().sum();
        let mut blocks = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &s in sizes {
            blocks.push(start..start + s);
            start += s;
        }
        let projections = blocks
            .iter()
            .map(|r| Projection::coordinate_block(dim, r.start, r.end))
            .collect();
        Self {
            dim,
            projections,
            blocks: Some(blocks),
        }
    }

    /// Rank-1 type: the identity is the only projection.
    pub fn open(dim: usize) -> Self {
        Self {
            dim,
            projections: vec![Projection::identity(dim)],
            blocks: Some(vec![0..dim]),
        }
    }

    pub fn from_bases(bases: Vec<Matrix>, tol: f64) -> Result<Self> {
        let dim = bases.first().map_or(0, Matrix::nrows);
        let total: usize = bases.iter().map(Matrix::ncols).sum();
        if bases.iter().any(|b| b.nrows() != dim) || total != dim {
            return Err(GameError::DimensionMismatch(format!(
                "bases must all have {dim} rows and {dim} columns in total, got {total}"
            )));
        }
        let projections: Vec<Projection> = bases
            .into_iter()
            .map(|b| Projection::from_basis(b, tol))
            .collect::<std::result::Result<_, _>>()?;
        let ts = Self {
            dim,
            projections,
            blocks: None,
        };
        let (complete, pairs) = ts.residuals();
        if let Some(&(first, second, residual)) = pairs.iter().find(|p| p.2 > tol) {
            return Err(GameError::NotAnnihilating {
                first,
                second,
                residual,
            });
        }
        if complete > tol {
            return Err(GameError::Incomplete { residual: complete });
        }
        Ok(ts)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.projections.len()
    }

    pub fn projection(&self, r: usize) -> &Projection {
        &self.projections[r]
    }

    pub fn projections(&self) -> &[Projection] {
        &self.projections
    }

    /// Coordinate ranges when every projection is a coordinate block.
    pub fn blocks(&self) -> Option<&[Range<usize>]> {
        self.blocks.as_deref()
    }

    /// `(‖Σπ_r − I‖_F, [(r, s, ‖π_rπ_s‖_F)])`.
    pub fn residuals(&self) -> (f64, Vec<(usize, usize, f64)>) {
        let mut sum = Matrix::zeros(self.dim, self.dim);
        for p in &self.projections {
            sum += p.matrix();
        }
        let complete = (sum - Matrix::identity(self.dim, self.dim)).norm();
        let mut pairs = Vec::new();
        for r in 0..self.projections.len() {
            for s in (r + 1)..self.projections.len() {
                let prod = self.projections[r].matrix() * self.projections[s].matrix();
                pairs.push((r, s, prod.norm()));
            }
        }
        (complete, pairs)
    }
}

/// Player → projection index (0-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlayerAssignment(Vec<usize>);

impl PlayerAssignment {
    pub fn new(rho: Vec<usize>, rank: usize) -> Result<Self> {
        if let Some((player, &projection)) = rho.iter().enumerate().find(|(_, &r)| r >= rank) {
            return Err(GameError::InvalidAssignment {
                player,
                projection,
                rank,
            });
        }
        Ok(Self(rho))
    }

    /// `ρ(n) = n`.
    pub fn identity(players: usize) -> Self {
        Self((0..players).collect())
    }

    /// Every player assigned to projection 0.
    pub fn shared(players: usize) -> Self {
        Self(vec![0; players])
    }

    pub fn of(&self, player: usize) -> usize {
        self.0[player]
    }

    pub fn players(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeasibleSet {
    Unconstrained,
    Ball { center: Vector, radius: f64 },
    Box { lo: Vector, hi: Vector },
    /// Consecutive coordinate blocks of the given sizes, each a probability simplex.
    BlockSimplex { sizes: Vec<usize> },
    /// Consecutive coordinate blocks, each confined to the centered ball of `radius`.
    BlockBall { sizes: Vec<usize>, radius: f64 },
}

fn block_ranges(sizes: &[usize]) -> Vec<Range<usize>> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &s in sizes {
        out.push(start..start + s);
        start += s;
    }
    out
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_simplex(x: &[f64]) -> Vec<f64> {
    let mut u = x.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j as f64 + 1.0);
        if uj - t > 0.0 {
            theta = t;
        }
    }
    x.iter().map(|&xi| (xi - theta).max(0.0)).collect()
}

impl FeasibleSet {
    pub fn unit_ball(dim: usize) -> Self {
        Self::Ball {
            center: Vector::zeros(dim),
            radius: 1.0,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: String| Err(GameError::InvalidFeasibleSet(m));
        match self {
            Self::Unconstrained => Ok(()),
            Self::Ball { center, radius } => {
                if center.len() != dim {
                    return bad(format!("ball center has length {}, expected {dim}", center.len()));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return bad(format!("radius must be positive, got {radius}"));
                }
                Ok(())
            }
            Self::Box { lo, hi } => {
                if lo.len() != dim || hi.len() != dim {
                    return bad(format!("box bounds must have length {dim}"));
                }
                if let Some(i) = (0..dim).find(|&i| !(lo[i] <= hi[i]) || !lo[i].is_finite() || !hi[i].is_finite()) {
                    return bad(format!("box bound {i}: lo {} > hi {}", lo[i], hi[i]));
                }
                Ok(())
            }
            Self::BlockSimplex { sizes } => {
                if sizes.iter().sum::<usize>() != dim || sizes.contains(&0) {
                    return bad(format!("simplex blocks {sizes:?} do not partition {dim} coordinates"));
                }
                Ok(())
            }
            Self::BlockBall { sizes, radius } => {
                if sizes.iter().sum::<usize>() != dim || sizes.contains(&0) {
                    return bad(format!("ball blocks {sizes:?} do not partition {dim} coordinates"));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return bad(format!("radius must be positive, got {radius}"));
                }
                Ok(())
            }
        }
    }

    /// Euclidean projection `argmin_{y ∈ H} ‖y − x‖`.
    pub fn project(&self, x: &Vector) -> Vector {
        match self {
            Self::Unconstrained => x.clone(),
            Self::Ball { center, radius } => {
                let d = x - center;
                let n = d.norm();
                if n <= *radius {
                    x.clone()
                } else {
                    center + d * (*radius / n)
                }
            }
            Self::Box { lo, hi } => Vector::from_iterator(x.len(), (0..x.len()).map(|i| x[i].clamp(lo[i], hi[i]))),
            Self::BlockSimplex { sizes } => {
                let mut out = x.clone();
                for r in block_ranges(sizes) {
                    let p = project_simplex(&x.as_slice()[r.clone()]);
                    out.as_mut_slice()[r].copy_from_slice(&p);
                }
                out
            }
            Self::BlockBall { sizes, radius } => {
                let mut out = x.clone();
                for r in block_ranges(sizes) {
                    let n = x.rows(r.start, r.len()).norm();
                    if n > *radius {
                        out.rows_mut(r.start, r.len()).scale_mut(*radius / n);
                    }
                }
                out
            }
        }
    }

    pub fn contains(&self, x: &Vector, tol: f64) -> bool {
        match self {
            Self::Unconstrained => true,
            Self::Ball { center, radius } => (x - center).norm() <= radius + tol,
            Self::Box { lo, hi } => (0..x.len()).all(|i| x[i] >= lo[i] - tol && x[i] <= hi[i] + tol),
            Self::BlockSimplex { sizes } => block_ranges(sizes).into_iter().all(|r| {
                let s = &x.as_slice()[r];
                s.iter().all(|&v| v >= -tol) && (s.iter().sum::<f64>() - 1.0).abs() <= tol * s.len().max(1) as f64
            }),
            Self::BlockBall { sizes, radius } => block_ranges(sizes)
                .into_iter()
                .all(|r| x.rows(r.start, r.len()).norm() <= radius + tol),
        }
    }

    /// Euclidean diameter; infinite when unconstrained.
    pub fn diameter(&self) -> f64 {
        match self {
            Self::Unconstrained => f64::INFINITY,
            Self::Ball { radius, .. } => 2.0 * radius,
            Self::Box { lo, hi } => (hi - lo).norm(),
            Self::BlockSimplex { sizes } => (sizes.iter().filter(|&&s| s > 1).count() as f64 * 2.0).sqrt(),
            Self::BlockBall { sizes, radius } => 2.0 * radius * (sizes.len() as f64).sqrt(),
        }
    }
}

/// User-supplied loss evaluated on the joint action.
pub trait BlackBoxLoss: Send + Sync {
    fn eval(&self, w: &Vector) -> f64;

    /// Whether concurrent evaluation is allowed; callers serialize otherwise.
    fn concurrent(&self) -> bool {
        true
    }
}

/// Wraps a closure as a [`BlackBoxLoss`].
pub struct FnLoss<F>(pub F);

impl<F: Fn(&Vector) -> f64 + Send + Sync> BlackBoxLoss for FnLoss<F> {
    fn eval(&self, w: &Vector) -> f64 {
        (self.0)(w)
    }
}

#[derive(Clone)]
pub enum LossSpec {
    /// `ℓ(w) = vᵀ A u` with `v = w[left]`, `u = w[right]`.
    Bilinear { a: Matrix, left: Range<usize>, right: Range<usize> },
    /// `ℓ(w) = ½ wᵀAw + wᵀb`; `a` is stored symmetrized.
    Quadratic { a: Matrix, b: Vector },
    /// `ℓ(w) = T ×_0 w_0 ··· ×_{N−1} w_{N−1}` over consecutive blocks of sizes `T.dims`.
    Multilinear { tensor: DenseTensor },
    BlackBox(Arc<dyn BlackBoxLoss>),
    /// `ℓ(w) = g_player(f_1(P_1ᵀw), …, f_L(P_Lᵀw))`.
    Factored { spec: Arc<FactorizationSpec>, player: usize },
}

impl fmt::Debug for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Bilinear { a, left, right } => f
                .debug_struct("Bilinear")
                .field("a", a)
                .field("left", left)
                .field("right", right)
                .finish(),
            Self::Quadratic { a, b } => f.debug_struct("Quadratic").field("a", a).field("b", b).finish(),
            Self::Multilinear { tensor } => f.debug_struct("Multilinear").field("dims", &tensor.dims()).finish(),
            Self::BlackBox(_) => f.write_str("BlackBox"),
            Self::Factored { player, .. } => f.debug_struct("Factored").field("player", player).finish(),
        }
    }
}

fn fd_step(x: f64, rel: f64) -> f64 {
    rel * x.abs().max(1.0)
}

/// Central finite-difference gradient with step `1e-5·max(1, |w_i|)`.
pub fn finite_difference_gradient(f: impl Fn(&Vector) -> f64, w: &Vector) -> Vector {
    let mut g = Vector::zeros(w.len());
    let mut x = w.clone();
    for i in 0..w.len() {
        let h = fd_step(w[i], 1e-5);
        x[i] = w[i] + h;
        let up = f(&x);
        x[i] = w[i] - h;
        let down = f(&x);
        x[i] = w[i];
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

/// Central second differences with step `1e-4·max(1, |w_i|)`, symmetrized.
pub fn finite_difference_hessian(f: impl Fn(&Vector) -> f64, w: &Vector) -> Matrix {
    let d = w.len();
    let mut h = Matrix::zeros(d, d);
    let mut x = w.clone();
    let f0 = f(w);
    for i in 0..d {
        let hi = fd_step(w[i], 1e-4);
        x[i] = w[i] + hi;
        let up = f(&x);
        x[i] = w[i] - hi;
        let down = f(&x);
        x[i] = w[i];
        h[(i, i)] = (up - 2.0 * f0 + down) / (hi * hi);
        for j in (i + 1)..d {
            let hj = fd_step(w[j], 1e-4);
            let mut corner = |si: f64, sj: f64| {
                x[i] = w[i] + si * hi;
                x[j] = w[j] + sj * hj;
                let v = f(&x);
                x[i] = w[i];
                x[j] = w[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0)) / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    (&h + h.transpose()) * 0.5
}

/// Splits a flat joint action into per-mode blocks.
fn split_blocks(w: &Vector, dims: &[usize]) -> Vec<Vector> {
    let mut out = Vec::with_capacity(dims.len());
    let mut start = 0;
    for &d in dims {
        out.push(w.rows(start, d).into_owned());
        start += d;
    }
    out
}

impl LossSpec {
    pub fn quadratic(a: Matrix, b: Vector) -> Result<Self> {
        if !a.is_square() || a.nrows() != b.len() {
            return Err(GameError::DimensionMismatch(format!(
                "quadratic loss: A is {:?}, b has length {}",
                a.shape(),
                b.len()
            )));
        }
        let a = (&a + a.transpose()) * 0.5;
        Ok(Self::Quadratic { a, b })
    }

    pub fn black_box(f: impl Fn(&Vector) -> f64 + Send + Sync + 'static) -> Self {
        Self::BlackBox(Arc::new(FnLoss(f)))
    }

    pub fn is_black_box(&self) -> bool {
        matches!(self, Self::BlackBox(_)) || matches!(self, Self::Factored { spec, .. } if spec.has_black_box())
    }

    pub fn concurrent(&self) -> bool {
        match self {
            Self::BlackBox(b) => b.concurrent(),
            Self::Factored { spec, .. } => spec.concurrent(),
            _ => true,
        }
    }

    /// Checks that the loss is defined on `R^dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |m: String| Err(GameError::InvalidLoss(m));
        match self {
            Self::Bilinear { a, left, right } => {
                if left.end > dim || right.end > dim || a.shape() != (left.len(), right.len()) {
                    return bad(format!(
                        "bilinear A is {:?} for blocks {left:?} x {right:?} in R^{dim}",
                        a.shape()
                    ));
                }
                Ok(())
            }
            Self::Quadratic { a, b } => {
                if a.shape() != (dim, dim) || b.len() != dim {
                    return bad(format!("quadratic A is {:?}, b has length {}, expected {dim}", a.shape(), b.len()));
                }
                Ok(())
            }
            Self::Multilinear { tensor } => {
                if tensor.dims().iter().sum::<usize>() != dim {
                    return bad(format!("tensor dims {:?} do not sum to {dim}", tensor.dims()));
                }
                Ok(())
            }
            Self::BlackBox(_) => Ok(()),
            Self::Factored { spec, player } => {
                if spec.dim() != dim {
                    return bad(format!("factorization acts on R^{}, expected {dim}", spec.dim()));
                }
                if *player >= spec.players() {
                    return bad(format!("factorization has {} outer maps, player {player} requested", spec.players()));
                }
                Ok(())
            }
        }
    }

    pub fn value(&self, w: &Vector) -> f64 {
        match self {
            Self::Bilinear { a, left, right } => {
                let v = w.rows(left.start, left.len());
                let u = w.rows(right.start, right.len());
                v.dot(&(a * u))
            }
            Self::Quadratic { a, b } => 0.5 * w.dot(&(a * w)) + w.dot(b),
            Self::Multilinear { tensor } => {
                multilinear_eval(tensor, &split_blocks(w, tensor.dims())).expect("validated dims")
            }
            Self::BlackBox(f) => f.eval(w),
            Self::Factored { spec, player } => spec.loss(*player, w),
        }
    }

    pub fn gradient(&self, w: &Vector) -> Vector {
        match self {
            Self::Bilinear { a, left, right } => {
                let mut g = Vector::zeros(w.len());
                let v = w.rows(left.start, left.len()).into_owned();
                let u = w.rows(right.start, right.len()).into_owned();
                g.rows_mut(left.start, left.len()).copy_from(&(a * &u));
                let gr = a.transpose() * &v;
                let mut view = g.rows_mut(right.start, right.len());
                view += gr;
                g
            }
            Self::Quadratic { a, b } => a * w + b,
            Self::Multilinear { tensor } => {
                let blocks = split_blocks(w, tensor.dims());
                let mut g = Vector::zeros(w.len());
                let mut start = 0;
                for (n, &d) in tensor.dims().iter().enumerate() {
                    let others: Vec<Vector> = blocks
                        .iter()
                        .enumerate()
                        .filter(|(m, _)| *m != n)
                        .map(|(_, v)| v.clone())
                        .collect();
                    let part = partial_contract(tensor, n, &others).expect("validated dims");
                    g.rows_mut(start, d).copy_from(&part);
                    start += d;
                }
                g
            }
            Self::BlackBox(f) => finite_difference_gradient(|x| f.eval(x), w),
            Self::Factored { spec, player } => spec.loss_gradient(*player, w),
        }
    }

    /// Analytic for bilinear and quadratic losses; differentiated analytic
    /// gradients for multilinear and factored losses; second differences otherwise.
    pub fn hessian(&self, w: &Vector) -> Matrix {
        let d = w.len();
        match self {
            Self::Bilinear { a, left, right } => {
                let mut h = Matrix::zeros(d, d);
                for i in 0..left.len() {
                    for j in 0..right.len() {
                        h[(left.start + i, right.start + j)] += a[(i, j)];
                        h[(right.start + j, left.start + i)] += a[(i, j)];
                    }
                }
                h
            }
            Self::Quadratic { a, .. } => a.clone(),
            Self::Multilinear { .. } | Self::Factored { .. } => {
                let mut h = Matrix::zeros(d, d);
                let mut x = w.clone();
                for i in 0..d {
                    let step = fd_step(w[i], 1e-5);
                    x[i] = w[i] + step;
                    let up = self.gradient(&x);
                    x[i] = w[i] - step;
                    let down = self.gradient(&x);
                    x[i] = w[i];
                    h.set_column(i, &((up - down) / (2.0 * step)));
                }
                (&h + h.transpose()) * 0.5
            }
            Self::BlackBox(f) => finite_difference_hessian(|x| f.eval(x), w),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Game {
    types: TypeStructure,
    assignment: PlayerAssignment,
    losses: Vec<LossSpec>,
    feasible: FeasibleSet,
}

impl Game {
    pub fn new(types: TypeStructure, assignment: PlayerAssignment, losses: Vec<LossSpec>, feasible: FeasibleSet) -> Result<Self> {
        if assignment.players() != losses.len() {
            return Err(GameError::DimensionMismatch(format!(
                "{} players assigned but {} losses given",
                assignment.players(),
                losses.len()
            )));
        }
        if let Some((player, &projection)) = assignment.as_slice().iter().enumerate().find(|(_, &r)| r >= types.rank()) {
            return Err(GameError::InvalidAssignment {
                player,
                projection,
                rank: types.rank(),
            });
        }
        let dim = types.dim();
        for l in &losses {
            l.validate(dim)?;
        }
        feasible.validate(dim)?;
        Ok(Self {
            types,
            assignment,
            losses,
            feasible,
        })
    }

    /// Block game with `ρ(n) = n`.
    pub fn block(sizes: &[usize], losses: Vec<LossSpec>, feasible: FeasibleSet) -> Result<Self> {
        Self::new(TypeStructure::block(sizes), PlayerAssignment::identity(sizes.len()), losses, feasible)
    }

    /// Open game: every player controls all coordinates.
    pub fn open(dim: usize, losses: Vec<LossSpec>, feasible: FeasibleSet) -> Result<Self> {
        let n = losses.len();
        Self::new(TypeStructure::open(dim), PlayerAssignment::shared(n), losses, feasible)
    }

    pub fn dim(&self) -> usize {
        self.types.dim()
    }

    pub fn players(&self) -> usize {
        self.losses.len()
    }

    pub fn types(&self) -> &TypeStructure {
        &self.types
    }

    pub fn assignment(&self) -> &PlayerAssignment {
        &self.assignment
    }

    pub fn losses(&self) -> &[LossSpec] {
        &self.losses
    }

    pub fn loss(&self, n: usize) -> &LossSpec {
        &self.losses[n]
    }

    pub fn feasible(&self) -> &FeasibleSet {
        &self.feasible
    }

    pub fn with_feasible(mut self, feasible: FeasibleSet) -> Result<Self> {
        feasible.validate(self.dim())?;
        self.feasible = feasible;
        Ok(self)
    }

    /// Projection controlled by player `n`.
    pub fn player_projection(&self, n: usize) -> &Projection {
        self.types.projection(self.assignment.of(n))
    }

    /// True when every player has its own projection and `ρ(n) = n`.
    pub fn is_block_game(&self) -> bool {
        self.types.rank() == self.players() && self.assignment.as_slice().iter().enumerate().all(|(n, &r)| n == r)
    }

    pub fn concurrent(&self) -> bool {
        self.losses.iter().all(LossSpec::concurrent)
    }

    fn check_player(&self, n: usize) -> Result<()> {
        if n < self.players() {
            Ok(())
        } else {
            Err(GameError::InvalidPlayer {
                player: n,
                players: self.players(),
            })
        }
    }

    fn check_point(&self, w: &Vector) -> Result<()> {
        if w.len() == self.dim() {
            Ok(())
        } else {
            Err(GameError::DimensionMismatch(format!(
                "joint action has length {}, expected {}",
                w.len(),
                self.dim()
            )))
        }
    }

    pub fn loss_eval(&self, n: usize, w: &Vector) -> Result<f64> {
        self.check_player(n)?;
        self.check_point(w)?;
        let v = self.losses[n].value(w);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(GameError::NonFiniteLoss { player: n })
        }
    }

    pub fn gradient(&self, n: usize, w: &Vector) -> Result<Vector> {
        self.check_player(n)?;
        self.check_point(w)?;
        let g = self.losses[n].gradient(w);
        if g.iter().all(|x| x.is_finite()) {
            Ok(g)
        } else {
            Err(GameError::NonFiniteLoss { player: n })
        }
    }

    pub fn gradients(&self, w: &Vector) -> Result<Vec<Vector>> {
        (0..self.players()).map(|n| self.gradient(n, w)).collect()
    }

    /// `π_{ρ(n)} ∇ℓ_n(w)`.
    pub fn projected_player_gradient(&self, n: usize, w: &Vector) -> Result<Vector> {
        let g = self.gradient(n, w)?;
        Ok(self.player_projection(n).apply(&g))
    }

    pub fn project_feasible(&self, x: &Vector) -> Vector {
        self.feasible.project(x)
    }

    /// Checks `|ℓ_m(w) − ℓ_m(π_m w)| ≤ tol` at every sample for every player.
    pub fn is_decomposable(&self, samples: &[Vector], tol: f64) -> Result<bool> {
        if !self.is_block_game() {
            return Err(GameError::NotBlockGame);
        }
        for w in samples {
            for m in 0..self.players() {
                let own = self.player_projection(m).apply(w);
                if (self.loss_eval(m, w)? - self.loss_eval(m, &own)?).abs() > tol {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// Largest Gram residual across a set of bases treated as one matrix.
pub(crate) fn joint_gram_residual(bases: &[Matrix]) -> f64 {
    let cols: Vec<Vector> = bases
        .iter()
        .flat_map(|b| (0..b.ncols()).map(move |j| b.column(j).into_owned()))
        .collect();
    if cols.is_empty() {
        return 0.0;
    }
    gram_residual(&Matrix::from_columns(&cols))
}
