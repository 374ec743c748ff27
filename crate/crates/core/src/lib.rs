//! Safety certificates and gradient dynamics for multi-agent differentiable games.
//!
//! A game is a set of losses over a joint action space split by orthogonal
//! projections into the coordinates each player controls. Gradient play is
//! *safe* when every player's projected gradient has nonnegative inner
//! product with every other player's gradient. This crate evaluates that
//! condition empirically, certifies it through structured factorizations
//! (shared SVDs, joint diagonalization, tensor-SVD), and runs projected
//! gradient dynamics with Nash checks.

pub mod bss;
pub mod dynamics;
pub mod error;
pub mod gallery;
pub mod game;
pub mod linalg;
pub mod nn;
pub mod safety;
pub mod sampling;
pub mod second_order;
pub mod tensor;

pub use error::{Error, Result};
pub use game::{FeasibleSet, Game, LossSpec, PlayerAssignment, TypeStructure};
pub use linalg::{Matrix, Projection, ToleranceConfig, Vector};
pub use tensor::DenseTensor;
