//! Projected simultaneous gradient play, potential traces and Nash probes.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::game::Game;
use crate::linalg::{Matrix, Vector};
use crate::safety::pairwise_safety_at;
use crate::sampling::{stream, unit_vector};

/// Feasibility slack for trajectory points and Nash probes.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    /// `η_t = c / √(t + 1)`.
    Decaying(f64),
}

impl StepSchedule {
    /// Decaying with `c = 0.1·diam(H)`, or `c = 0.1` for unbounded sets.
    pub fn default_for(game: &Game) -> Self {
        let d = game.feasible().diameter();
        Self::Decaying(0.1 * if d.is_finite() { d } else { 1.0 })
    }

    pub fn at(&self, t: usize) -> f64 {
        match *self {
            Self::Constant(eta) => eta,
            Self::Decaying(c) => c / ((t + 1) as f64).sqrt(),
        }
    }

    fn scale(&self) -> f64 {
        match *self {
            Self::Constant(x) | Self::Decaying(x) => x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateOrder {
    /// All players step from the same point, then one projection.
    #[default]
    Simultaneous,
    /// Players step one after another, each followed by a projection.
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsConfig {
    pub schedule: StepSchedule,
    pub max_rounds: usize,
    /// Stop once `‖w^{t+1} − w^t‖ ≤ tol·η_t`.
    pub tol: f64,
    /// Potential weights `α_n`; all ones when empty.
    pub weights: Vec<f64>,
    pub order: UpdateOrder,
}

impl DynamicsConfig {
    pub fn new(schedule: StepSchedule, max_rounds: usize) -> Self {
        Self {
            schedule,
            max_rounds,
            tol: 1e-9,
            weights: Vec::new(),
            order: UpdateOrder::Simultaneous,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.weights = weights;
        self
    }

    pub fn with_order(mut self, order: UpdateOrder) -> Self {
        self.order = order;
        self
    }

    fn validate(&self, players: usize) -> Result<Vec<f64>> {
        let s = self.schedule.scale();
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidInput(format!("step size must be positive, got {s}")));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidInput(format!("tolerance must be nonnegative, got {}", self.tol)));
        }
        weights_or_default(&self.weights, players)
    }
}

fn weights_or_default(weights: &[f64], players: usize) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Ok(vec![1.0; players]);
    }
    if weights.len() != players {
        return Err(Error::InvalidInput(format!("{} weights for {players} players", weights.len())));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::InvalidInput(format!("weights must be positive, got {w}")));
    }
    Ok(weights.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxRounds,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Converged => "converged",
            Self::MaxRounds => "max_rounds",
        }
    }
}

/// Rounds `0..=T`; entry `t` of every list belongs to `w^t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<Vector>,
    pub losses: Vec<Vec<f64>>,
    pub potential: Vec<f64>,
    pub min_safety: Vec<f64>,
    pub steps: Vec<f64>,
    pub termination: Termination,
}

impl Trajectory {
    pub fn rounds(&self) -> usize {
        self.points.len() - 1
    }

    pub fn last(&self) -> &Vector {
        self.points.last().expect("trajectory holds the start point")
    }

    /// `round,w_1..w_D,loss_1..loss_N,potential,min_safety` with 17
    /// significant digits per float.
    pub fn to_csv(&self) -> String {
        let dim = self.points[0].len();
        let players = self.losses[0].len();
        let mut out = String::from("round");
        for i in 1..=dim {
            write!(out, ",w_{i}").unwrap();
        }
        for n in 1..=players {
            write!(out, ",loss_{n}").unwrap();
        }
        out.push_str(",potential,min_safety\n");
        for t in 0..self.points.len() {
            write!(out, "{t}").unwrap();
            for x in self.points[t].iter().chain(&self.losses[t]) {
                write!(out, ",{x:.16e}").unwrap();
            }
            writeln!(out, ",{:.16e},{:.16e}", self.potential[t], self.min_safety[t]).unwrap();
        }
        out
    }
}

fn round_stats(game: &Game, w: &Vector, weights: &[f64]) -> Result<(Vec<f64>, f64, f64)> {
    let losses = (0..game.players()).map(|n| game.loss_eval(n, w)).collect::<std::result::Result<Vec<_>, _>>()?;
    let potential = losses.iter().zip(weights).map(|(l, a)| a * l).sum();
    let min_safety = pairwise_safety_at(game, w)?.min();
    Ok((losses, potential, min_safety))
}

fn step(game: &Game, w: &Vector, eta: f64, order: UpdateOrder) -> Result<Vector> {
    match order {
        UpdateOrder::Simultaneous => {
            let mut next = w.clone();
            for n in 0..game.players() {
                next -= game.projected_player_gradient(n, w)? * eta;
            }
            Ok(game.project_feasible(&next))
        }
        UpdateOrder::RoundRobin => {
            let mut cur = w.clone();
            for n in 0..game.players() {
                let g = game.projected_player_gradient(n, &cur)?;
                cur = game.project_feasible(&(&cur - g * eta));
            }
            Ok(cur)
        }
    }
}

/// Runs gradient play from `w0` until the displacement falls below
/// `tol·η_t` or `max_rounds` steps have been taken.
pub fn simulate(game: &Game, w0: &Vector, config: &DynamicsConfig) -> Result<Trajectory> {
    let weights = config.validate(game.players())?;
    if w0.len() != game.dim() {
        return Err(Error::InvalidInput(format!("start has length {}, expected {}", w0.len(), game.dim())));
    }
    if !game.feasible().contains(w0, FEASIBILITY_TOL) {
        return Err(Error::InfeasibleStart);
    }
    let mut traj = Trajectory {
        points: vec![w0.clone()],
        losses: Vec::new(),
        potential: Vec::new(),
        min_safety: Vec::new(),
        steps: Vec::new(),
        termination: Termination::MaxRounds,
    };
    let push_stats = |traj: &mut Trajectory, w: &Vector| -> Result<()> {
        let (l, p, s) = round_stats(game, w, &weights)?;
        traj.losses.push(l);
        traj.potential.push(p);
        traj.min_safety.push(s);
        Ok(())
    };
    push_stats(&mut traj, w0)?;
    let mut w = w0.clone();
    for t in 0..config.max_rounds {
        let eta = config.schedule.at(t);
        let next = step(game, &w, eta, config.order)?;
        let moved = (&next - &w).norm();
        push_stats(&mut traj, &next)?;
        traj.points.push(next.clone());
        traj.steps.push(eta);
        w = next;
        if moved <= config.tol * eta {
            traj.termination = Termination::Converged;
            break;
        }
    }
    Ok(traj)
}

/// `Φ(w^t) = Σ α_n ℓ_n(w^t)` along a trajectory.
pub fn potential_trace(game: &Game, trajectory: &Trajectory, weights: &[f64]) -> Result<Vec<f64>> {
    let weights = weights_or_default(weights, game.players())?;
    trajectory
        .points
        .iter()
        .map(|w| {
            let mut phi = 0.0;
            for (n, a) in weights.iter().enumerate() {
                phi += a * game.loss_eval(n, w)?;
            }
            Ok(phi)
        })
        .collect()
}

/// `min_m ⟨π_{ρ(m)}∇Φ, ∇ℓ_m⟩ − α_m‖π_{ρ(m)}∇ℓ_m‖²`, i.e. the smallest
/// weighted sum of cross terms. Nonnegative in safe games.
pub fn descent_direction_check(game: &Game, w: &Vector, weights: &[f64]) -> Result<f64> {
    let weights = weights_or_default(weights, game.players())?;
    let grads = game.gradients(w)?;
    let mut grad_phi = Vector::zeros(game.dim());
    for (g, a) in grads.iter().zip(&weights) {
        grad_phi += g * *a;
    }
    let mut best = f64::INFINITY;
    for (m, g) in grads.iter().enumerate() {
        let pi = game.player_projection(m);
        let own = pi.apply(g);
        let value = pi.apply(&grad_phi).dot(g) - weights[m] * own.norm_squared();
        best = best.min(value);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    /// Random directions per player on top of the ± basis grid.
    pub random_directions: usize,
    /// Geometric magnitudes from `tol` up to the feasible diameter.
    pub magnitudes: usize,
    /// Largest magnitude when the feasible set is unbounded.
    pub unbounded_radius: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            random_directions: 64,
            magnitudes: 24,
            unbounded_radius: 10.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlayerNash {
    pub player: usize,
    pub is_nash: bool,
    /// Largest decrease `ℓ_n(w) − ℓ_n(w + π v)` found (≤ 0 when none).
    pub best_improvement: f64,
    pub best_deviation: Option<Vector>,
    /// `‖π_{ρ(n)}∇ℓ_n(w)‖`, meaningful as a first-order proxy at interior points.
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NashReport {
    pub players: Vec<PlayerNash>,
}

impl NashReport {
    pub fn is_nash(&self) -> bool {
        self.players.iter().all(|p| p.is_nash)
    }
}

/// Largest `s ∈ [0, 1]` with `w + s·v` strictly feasible, by bisection on
/// the convex set. No slack here, otherwise probes at boundary points gain
/// from stepping slightly outside.
fn feasible_fraction(game: &Game, w: &Vector, v: &Vector) -> f64 {
    let feasible = game.feasible();
    if feasible.contains(&(w + v), 0.0) {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if feasible.contains(&(w + v * mid), 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Brute-force Nash probe. Each player tries unilateral deviations `π_{ρ(n)}v`
/// along its ± basis directions and seeded random directions, at magnitudes
/// from `tol` to the feasible diameter; deviations leaving the feasible set
/// are shortened to its boundary. Player `n` passes when no deviation lowers
/// `ℓ_n` by more than `tol`.
pub fn nash_check(game: &Game, w: &Vector, tol: f64, probe: &ProbeConfig) -> Result<NashReport> {
    if w.len() != game.dim() {
        return Err(Error::InvalidInput(format!("point has length {}, expected {}", w.len(), game.dim())));
    }
    if !game.feasible().contains(w, FEASIBILITY_TOL) {
        return Err(Error::InfeasibleStart);
    }
    let diam = game.feasible().diameter();
    let max_mag = if diam.is_finite() { diam } else { probe.unbounded_radius };
    let min_mag = tol.max(1e-12).min(max_mag);
    let mags: Vec<f64> = (0..probe.magnitudes.max(1))
        .map(|k| {
            let f = if probe.magnitudes > 1 { k as f64 / (probe.magnitudes - 1) as f64 } else { 1.0 };
            min_mag * (max_mag / min_mag).powf(f)
        })
        .collect();
    let mut players = Vec::with_capacity(game.players());
    for n in 0..game.players() {
        let pi = game.player_projection(n);
        let basis: &Matrix = pi.basis();
        let mut dirs: Vec<Vector> = Vec::new();
        for j in 0..basis.ncols() {
            let c: Vector = basis.column(j).into_owned();
            dirs.push(-&c);
            dirs.push(c);
        }
        let mut rng = stream(probe.seed, n as u64);
        for _ in 0..probe.random_directions {
            if basis.ncols() > 0 {
                dirs.push(basis * unit_vector(&mut rng, basis.ncols()));
            }
        }
        let base = game.loss_eval(n, w)?;
        let mut best = (f64::NEG_INFINITY, None);
        for d in &dirs {
            for &m in &mags {
                let v = d * m;
                let s = feasible_fraction(game, w, &v);
                if s == 0.0 {
                    continue;
                }
                let dev = &v * s;
                let gain = base - game.loss_eval(n, &(w + &dev))?;
                if gain > best.0 {
                    best = (gain, Some(dev));
                }
            }
        }
        let gradient_norm = game.projected_player_gradient(n, w)?.norm();
        let best_improvement = if best.0.is_finite() { best.0 } else { 0.0 };
        players.push(PlayerNash {
            player: n,
            is_nash: best_improvement <= tol,
            best_improvement,
            best_deviation: if best_improvement > 0.0 { best.1 } else { None },
            gradient_norm,
        });
    }
    Ok(NashReport { players })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{FeasibleSet, LossSpec};
    use crate::gallery;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    #[test]
    fn zero_rounds_keeps_only_the_start() {
        let t = simulate(&gallery::ex3(), &Vector::from_column_slice(&[0.5, 0.5]), &DynamicsConfig::new(StepSchedule::Constant(0.1), 0)).unwrap();
        assert_eq!(t.rounds(), 0);
        assert_eq!(t.to_csv().lines().count(), 2);
    }

    #[test]
    fn ex3_converges_to_the_arc() {
        let game = gallery::ex3();
        let cfg = DynamicsConfig::new(StepSchedule::default_for(&game), 10_000);
        let traj = simulate(&game, &v(&[0.5, 0.5]), &cfg).unwrap();
        let w = traj.last();
        assert_eq!(traj.termination, Termination::Converged);
        assert!((w.norm() - 1.0).abs() < 1e-3);
        assert!(w[0] <= 1e-3 && w[1] <= 1e-3);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((w[0] + s).abs() < 1e-2 && (w[1] + s).abs() < 1e-2);
        assert!(nash_check(&game, w, 1e-3, &ProbeConfig::default()).unwrap().is_nash());
    }

    #[test]
    fn ex3_potential_decreases_until_boundary() {
        let game = gallery::ex3();
        let cfg = DynamicsConfig::new(StepSchedule::Decaying(0.2), 500);
        let traj = simulate(&game, &v(&[0.5, 0.5]), &cfg).unwrap();
        let phi = potential_trace(&game, &traj, &[1.0, 1.0]).unwrap();
        assert_eq!(phi, traj.potential);
        for (t, w) in traj.points.iter().enumerate() {
            assert!((phi[t] - 3.0 * (w[0] + w[1])).abs() < 1e-12);
        }
        let interior = traj.points.iter().take_while(|w| w.norm() < 1.0 - 1e-12).count();
        for t in 1..interior {
            assert!(phi[t] < phi[t - 1]);
        }
    }

    #[test]
    fn ex4_radius_grows() {
        let game = gallery::ex4();
        let eta = 0.05;
        let cfg = DynamicsConfig::new(StepSchedule::Constant(eta), 200);
        let traj = simulate(&game, &v(&[1.0, 0.0]), &cfg).unwrap();
        for pair in traj.points.windows(2) {
            let ratio = pair[1].norm_squared() / pair[0].norm_squared();
            assert!((ratio - (1.0 + eta * eta)).abs() / (1.0 + eta * eta) <= 1e-12);
            assert!(pair[1].norm() >= 0.5);
        }
        assert_eq!(traj.termination, Termination::MaxRounds);
    }

    #[test]
    fn critical_point_is_constant() {
        let game = gallery::ex4();
        let cfg = DynamicsConfig::new(StepSchedule::Constant(0.1), 20);
        let traj = simulate(&game, &v(&[0.0, 0.0]), &cfg).unwrap();
        assert_eq!(traj.termination, Termination::Converged);
        assert!(traj.points.iter().all(|w| w == &v(&[0.0, 0.0])));
        let phi = potential_trace(&game, &traj, &[]).unwrap();
        assert!(phi.iter().all(|&p| p == phi[0]));
    }

    #[test]
    fn single_player_potential_is_scaled_loss() {
        let game = gallery::saddle();
        let cfg = DynamicsConfig::new(StepSchedule::Constant(0.1), 10);
        let traj = simulate(&game, &v(&[0.3, 0.1]), &cfg).unwrap();
        let phi = potential_trace(&game, &traj, &[2.5]).unwrap();
        for (p, l) in phi.iter().zip(&traj.losses) {
            assert_eq!(*p, 2.5 * l[0]);
        }
    }

    #[test]
    fn infeasible_start_and_bad_config() {
        let game = gallery::ex3();
        let cfg = DynamicsConfig::new(StepSchedule::Constant(0.1), 10);
        assert_eq!(simulate(&game, &v(&[1.0, 1.0]), &cfg), Err(Error::InfeasibleStart));
        let bad = DynamicsConfig::new(StepSchedule::Constant(0.0), 10);
        assert!(simulate(&game, &v(&[0.0, 0.0]), &bad).is_err());
        let bad = cfg.clone().with_weights(vec![1.0, -1.0]);
        assert!(simulate(&game, &v(&[0.0, 0.0]), &bad).is_err());
    }

    #[test]
    fn nan_loss_is_an_error() {
        let game = Game::block(
            &[1, 1],
            vec![LossSpec::black_box(|w| w[0].ln()), LossSpec::black_box(|w| w[1])],
            FeasibleSet::Unconstrained,
        )
        .unwrap();
        let cfg = DynamicsConfig::new(StepSchedule::Constant(0.1), 10);
        assert!(simulate(&game, &v(&[-1.0, 0.0]), &cfg).is_err());
    }

    #[test]
    fn descent_check_examples() {
        let d = descent_direction_check(&gallery::ex3(), &v(&[0.1, 0.2]), &[1.0, 1.0]).unwrap();
        assert_eq!(d, 2.0);
        assert!(descent_direction_check(&gallery::ex4(), &v(&[1.0, 1.0]), &[1.0, 1.0]).unwrap() < 0.0);
        let decomposable = Game::block(
            &[1, 1],
            vec![
                LossSpec::quadratic(Matrix::from_diagonal(&v(&[1.0, 0.0])), v(&[0.5, 0.0])).unwrap(),
                LossSpec::quadratic(Matrix::from_diagonal(&v(&[0.0, 3.0])), v(&[0.0, -1.0])).unwrap(),
            ],
            FeasibleSet::Unconstrained,
        )
        .unwrap();
        assert_eq!(descent_direction_check(&decomposable, &v(&[0.4, -0.9]), &[2.0, 0.5]).unwrap(), 0.0);
    }

    #[test]
    fn nash_examples() {
        let game = gallery::ex3();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let probe = ProbeConfig::default();
        assert!(nash_check(&game, &v(&[-s, -s]), 1e-9, &probe).unwrap().is_nash());
        let r = nash_check(&game, &v(&[0.5, 0.5]), 1e-9, &probe).unwrap();
        assert!(r.players.iter().all(|p| !p.is_nash));
        assert!(nash_check(&gallery::ex4(), &v(&[0.0, 0.0]), 1e-9, &probe).unwrap().is_nash());
        assert!(nash_check(&game, &v(&[2.0, 0.0]), 1e-9, &probe).is_err());
    }

    #[test]
    fn round_robin_differs_but_stays_feasible() {
        let game = gallery::ex4().with_feasible(FeasibleSet::unit_ball(2)).unwrap();
        let base = DynamicsConfig::new(StepSchedule::Constant(0.3), 5);
        let a = simulate(&game, &v(&[0.5, 0.0]), &base).unwrap();
        let b = simulate(&game, &v(&[0.5, 0.0]), &base.clone().with_order(UpdateOrder::RoundRobin)).unwrap();
        assert_ne!(a.points, b.points);
        assert!(b.points.iter().all(|w| game.feasible().contains(w, FEASIBILITY_TOL)));
    }

    #[test]
    fn csv_layout() {
        let game = gallery::ex3();
        let traj = simulate(&game, &v(&[0.0, 0.0]), &DynamicsConfig::new(StepSchedule::Constant(0.1), 2)).unwrap();
        let csv = traj.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("round,w_1,w_2,loss_1,loss_2,potential,min_safety"));
        let row: Vec<&str> = lines.nth(1).unwrap().split(',').collect();
        assert_eq!(row[0], "1");
        assert_eq!(row[1].parse::<f64>().unwrap(), traj.points[1][0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn trajectories_are_feasible_and_deterministic(x in -0.7f64..0.7, y in -0.7f64..0.7, eta in 0.01f64..0.5) {
            let game = gallery::ex4().with_feasible(FeasibleSet::unit_ball(2)).unwrap();
            let cfg = DynamicsConfig::new(StepSchedule::Decaying(eta), 50);
            let a = simulate(&game, &v(&[x, y]), &cfg).unwrap();
            let b = simulate(&game, &v(&[x, y]), &cfg).unwrap();
            prop_assert!(a.points.iter().all(|w| game.feasible().contains(w, FEASIBILITY_TOL)));
            prop_assert_eq!(a.points.len(), a.losses.len());
            prop_assert_eq!(a.points.len(), a.min_safety.len());
            prop_assert_eq!(a, b);
        }
    }
}
