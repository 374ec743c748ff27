//! Shared factorizations `ℓ_n(w) = g_n(f_1(P_1ᵀw), …, f_L(P_Lᵀw))`.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::game::finite_difference_gradient;
use crate::linalg::{Matrix, Vector};

/// Black-box latent map `f_l: R^{p_l} → R`.
pub trait LatentMap: Send + Sync {
    fn eval(&self, x: &Vector) -> f64;
    fn concurrent(&self) -> bool {
        true
    }
}

/// Black-box outer map `g_n: R^L → R`.
pub trait OuterFn: Send + Sync {
    fn eval(&self, z: &Vector) -> f64;
    fn concurrent(&self) -> bool {
        true
    }
}

pub struct FnLatent<F>(pub F);

impl<F: Fn(&Vector) -> f64 + Send + Sync> LatentMap for FnLatent<F> {
    fn eval(&self, x: &Vector) -> f64 {
        (self.0)(x)
    }
}

pub struct FnOuter<F>(pub F);

impl<F: Fn(&Vector) -> f64 + Send + Sync> OuterFn for FnOuter<F> {
    fn eval(&self, z: &Vector) -> f64 {
        (self.0)(z)
    }
}

#[derive(Clone)]
pub enum InnerMap {
    /// `f(x) = s·(s/2 + offset)` with `s = rᵀx`.
    AffineQuadratic { r: Vector, offset: f64 },
    /// `f(x) = Π_i x_i`.
    Product,
    BlackBox(Arc<dyn LatentMap>),
}

#[derive(Clone)]
pub enum OuterMap {
    /// `g(z) = dᵀz`.
    Linear(Vector),
    BlackBox(Arc<dyn OuterFn>),
}

impl fmt::Debug for InnerMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::AffineQuadratic { r, offset } => f
                .debug_struct("AffineQuadratic")
                .field("r", &r.as_slice())
                .field("offset", offset)
                .finish(),
            Self::Product => f.write_str("Product"),
            Self::BlackBox(_) => f.write_str("BlackBox"),
        }
    }
}

impl fmt::Debug for OuterMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Linear(d) => f.debug_tuple("Linear").field(&d.as_slice()).finish(),
            Self::BlackBox(_) => f.write_str("BlackBox"),
        }
    }
}

impl InnerMap {
    pub fn eval(&self, x: &Vector) -> f64 {
        match self {
            Self::AffineQuadratic { r, offset } => {
                let s = r.dot(x);
                s * (0.5 * s + offset)
            }
            Self::Product => x.iter().product(),
            Self::BlackBox(f) => f.eval(x),
        }
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        match self {
            Self::AffineQuadratic { r, offset } => r * (r.dot(x) + offset),
            Self::Product => Vector::from_fn(x.len(), |i, _| {
                x.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).product()
            }),
            Self::BlackBox(f) => finite_difference_gradient(|y| f.eval(y), x),
        }
    }
}

impl OuterMap {
    pub fn eval(&self, z: &Vector) -> f64 {
        match self {
            Self::Linear(d) => d.dot(z),
            Self::BlackBox(g) => g.eval(z),
        }
    }

    /// `∂g/∂z`, exact for linear maps.
    pub fn partials(&self, z: &Vector) -> Vector {
        match self {
            Self::Linear(d) => d.clone(),
            Self::BlackBox(g) => finite_difference_gradient(|y| g.eval(y), z),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FactorizationSpec {
    bases: Vec<Matrix>,
    inner: Vec<InnerMap>,
    outer: Vec<OuterMap>,
}

impl FactorizationSpec {
    /// Shape checks only; orthonormality and commutation are certificate conditions.
    pub fn new(bases: Vec<Matrix>, inner: Vec<InnerMap>, outer: Vec<OuterMap>) -> Result<Self> {
        let dim = bases.first().map_or(0, Matrix::nrows);
        if let Some(l) = bases.iter().position(|b| b.nrows() != dim) {
            return Err(Error::InvalidInput(format!("latent basis {l} has {} rows, expected {dim}", bases[l].nrows())));
        }
        if inner.len() != bases.len() {
            return Err(Error::InvalidInput(format!("{} inner maps for {} latent bases", inner.len(), bases.len())));
        }
        for (l, (f, p)) in inner.iter().zip(&bases).enumerate() {
            if let InnerMap::AffineQuadratic { r, .. } = f {
                if r.len() != p.ncols() {
                    return Err(Error::InvalidInput(format!(
                        "inner map {l}: r has length {}, basis has {} columns",
                        r.len(),
                        p.ncols()
                    )));
                }
            }
        }
        for (n, g) in outer.iter().enumerate() {
            if let OuterMap::Linear(d) = g {
                if d.len() != bases.len() {
                    return Err(Error::InvalidInput(format!(
                        "outer map {n} has {} coefficients for {} latents",
                        d.len(),
                        bases.len()
                    )));
                }
            }
        }
        Ok(Self { bases, inner, outer })
    }

    pub fn dim(&self) -> usize {
        self.bases.first().map_or(0, Matrix::nrows)
    }

    pub fn latents(&self) -> usize {
        self.bases.len()
    }

    pub fn players(&self) -> usize {
        self.outer.len()
    }

    pub fn bases(&self) -> &[Matrix] {
        &self.bases
    }

    pub fn inner(&self) -> &[InnerMap] {
        &self.inner
    }

    pub fn outer(&self) -> &[OuterMap] {
        &self.outer
    }

    pub fn has_black_box(&self) -> bool {
        self.inner.iter().any(|f| matches!(f, InnerMap::BlackBox(_)))
            || self.outer.iter().any(|g| matches!(g, OuterMap::BlackBox(_)))
    }

    pub fn has_black_box_outer(&self) -> bool {
        self.outer.iter().any(|g| matches!(g, OuterMap::BlackBox(_)))
    }

    pub fn concurrent(&self) -> bool {
        self.inner.iter().all(|f| match f {
            InnerMap::BlackBox(b) => b.concurrent(),
            _ => true,
        }) && self.outer.iter().all(|g| match g {
            OuterMap::BlackBox(b) => b.concurrent(),
            _ => true,
        })
    }

    /// `z_l = f_l(P_lᵀ w)`.
    pub fn latent_values(&self, w: &Vector) -> Vector {
        Vector::from_iterator(
            self.latents(),
            self.bases.iter().zip(&self.inner).map(|(p, f)| f.eval(&(p.transpose() * w))),
        )
    }

    pub fn loss(&self, player: usize, w: &Vector) -> f64 {
        self.outer[player].eval(&self.latent_values(w))
    }

    /// Chain rule: `Σ_l ∂g/∂z_l · P_l ∇f_l(P_lᵀw)`.
    pub fn loss_gradient(&self, player: usize, w: &Vector) -> Vector {
        let z = self.latent_values(w);
        let dg = self.outer[player].partials(&z);
        let mut out = Vector::zeros(w.len());
        for (l, (p, f)) in self.bases.iter().zip(&self.inner).enumerate() {
            if dg[l] != 0.0 {
                out += p * f.gradient(&(p.transpose() * w)) * dg[l];
            }
        }
        out
    }
}
