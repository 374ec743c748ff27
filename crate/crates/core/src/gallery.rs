//! Named example games used by tests, the CLI and the docs.

use std::sync::Arc;

use crate::game::{FeasibleSet, Game, LossSpec};
use crate::linalg::{Matrix, Vector};
use crate::safety::factorization::{FactorizationSpec, FnLatent, InnerMap, OuterMap};

fn v(x: &[f64]) -> Vector {
    Vector::from_column_slice(x)
}

/// `ℓ_1 = x + 2y`, `ℓ_2 = 2x + y` on the unit disk. Convex and safe; the
/// Nash equilibria form the lower-left quarter of the circle.
pub fn ex3() -> Game {
    let z = Matrix::zeros(2, 2);
    Game::block(
        &[1, 1],
        vec![
            LossSpec::Quadratic { a: z.clone(), b: v(&[1.0, 2.0]) },
            LossSpec::Quadratic { a: z, b: v(&[2.0, 1.0]) },
        ],
        FeasibleSet::unit_ball(2),
    )
    .expect("valid example")
}

/// Latents `f_1 = x`, `f_2 = y` with `g_1 = z_1 + 2z_2`, `g_2 = 2z_1 + z_2`.
pub fn ex3_factorization() -> FactorizationSpec {
    let coord = |i: usize| Matrix::from_fn(2, 1, |r, _| if r == i { 1.0 } else { 0.0 });
    let identity = || InnerMap::BlackBox(Arc::new(FnLatent(|x: &Vector| x[0])));
    FactorizationSpec::new(
        vec![coord(0), coord(1)],
        vec![identity(), identity()],
        vec![OuterMap::Linear(v(&[1.0, 2.0])), OuterMap::Linear(v(&[2.0, 1.0]))],
    )
    .expect("valid factorization")
}

/// `ℓ_1 = xy`, `ℓ_2 = −xy`. Zero-sum and unsafe.
pub fn ex4() -> Game {
    let a = Matrix::from_element(1, 1, 1.0);
    Game::block(
        &[1, 1],
        vec![
            LossSpec::Bilinear { a: a.clone(), left: 0..1, right: 1..2 },
            LossSpec::Bilinear { a: -a, left: 0..1, right: 1..2 },
        ],
        FeasibleSet::Unconstrained,
    )
    .expect("valid example")
}

/// The single latent `f = xy` with `g_1 = f`, `g_2 = −f`.
pub fn ex4_factorization() -> FactorizationSpec {
    FactorizationSpec::new(
        vec![Matrix::identity(2, 2)],
        vec![InnerMap::Product],
        vec![OuterMap::Linear(v(&[1.0])), OuterMap::Linear(v(&[-1.0]))],
    )
    .expect("valid factorization")
}

/// `ℓ_1 = x_1y_1 + 2x_2y_2`, `ℓ_2 = 3x_1y_1 + 4x_2y_2` with `x, y ∈ R²`.
/// Strongly typed but not a weighted potential game.
pub fn ex5() -> Game {
    Game::block(
        &[2, 2],
        vec![
            LossSpec::Bilinear { a: Matrix::from_diagonal(&v(&[1.0, 2.0])), left: 0..2, right: 2..4 },
            LossSpec::Bilinear { a: Matrix::from_diagonal(&v(&[3.0, 4.0])), left: 0..2, right: 2..4 },
        ],
        FeasibleSet::Unconstrained,
    )
    .expect("valid example")
}

/// Latents `f_l = x_ly_l` on the coordinate pairs `(x_l, y_l)`.
pub fn ex5_factorization() -> FactorizationSpec {
    let pair = |i: usize, j: usize| {
        let mut p = Matrix::zeros(4, 2);
        p[(i, 0)] = 1.0;
        p[(j, 1)] = 1.0;
        p
    };
    FactorizationSpec::new(
        vec![pair(0, 2), pair(1, 3)],
        vec![InnerMap::Product, InnerMap::Product],
        vec![OuterMap::Linear(v(&[1.0, 2.0])), OuterMap::Linear(v(&[3.0, 4.0]))],
    )
    .expect("valid factorization")
}

/// `ℓ_1 = xy`, `ℓ_2 = xy − 9x`. A potential game that is unsafe for `y ∈ (0, 9)`.
pub fn ex6() -> Game {
    let a = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    Game::block(
        &[1, 1],
        vec![
            LossSpec::Quadratic { a: a.clone(), b: Vector::zeros(2) },
            LossSpec::Quadratic { a, b: v(&[-9.0, 0.0]) },
        ],
        FeasibleSet::Unconstrained,
    )
    .expect("valid example")
}

/// Single-player saddle `ℓ = ½(x² − y²)`.
pub fn saddle() -> Game {
    Game::open(
        2,
        vec![LossSpec::Quadratic { a: Matrix::from_diagonal(&v(&[1.0, -1.0])), b: Vector::zeros(2) }],
        FeasibleSet::Unconstrained,
    )
    .expect("valid example")
}
