//! Newton, natural-gradient and mirror-descent steps, with the Legendre
//! duality that links the last two.

use crate::error::{Error, Result};
use crate::game::LossSpec;
use crate::linalg::{scale, svd_sorted, Matrix, Vector};

/// Hessian of a loss; analytic for quadratic and bilinear losses.
pub fn hessian(loss: &LossSpec, w: &Vector) -> Result<Matrix> {
    let h = loss.hessian(w);
    if h.iter().all(|x| x.is_finite()) {
        Ok(h)
    } else {
        Err(Error::Domain("Hessian has non-finite entries".into()))
    }
}

/// `H⁻¹g` for symmetric `H`, with the condition number of `H`.
fn solve_hessian(h: &Matrix, g: &Vector) -> Result<(Vector, f64)> {
    let (_, s, _) = svd_sorted(h);
    let (smax, smin) = (s.max(), s.min());
    if smin <= 1e-12 * scale(smax) {
        return Err(Error::Singular { min_sv: smin });
    }
    let x = h.clone().lu().solve(g).ok_or(Error::Singular { min_sv: smin })?;
    Ok((x, smax / smin))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonStep {
    /// `η·H⁻¹∇ℓ`; the update is `w − step`.
    pub step: Vector,
    pub condition_number: f64,
}

pub fn newton_step(loss: &LossSpec, w: &Vector, eta: f64) -> Result<NewtonStep> {
    let h = hessian(loss, w)?;
    let (x, condition_number) = solve_hessian(&h, &loss.gradient(w))?;
    Ok(NewtonStep { step: x * eta, condition_number })
}

/// `⟨H⁻¹∇ℓ, ∇ℓ⟩`; positive away from the minimizer of a strictly convex loss.
pub fn newton_safety(loss: &LossSpec, w: &Vector) -> Result<f64> {
    let g = loss.gradient(w);
    let (x, _) = solve_hessian(&hessian(loss, w)?, &g)?;
    Ok(x.dot(&g))
}

fn check_spd(g: &Matrix) -> Result<()> {
    if !g.is_square() || (g - g.transpose()).norm() > 1e-10 * scale(g.norm()) {
        return Err(Error::NotPositiveDefinite);
    }
    g.clone().cholesky().map(|_| ()).ok_or(Error::NotPositiveDefinite)
}

/// `η·G⁻¹∇ℓ` for a symmetric positive definite metric `G`.
pub fn natural_gradient_step(grad: &Vector, metric: &Matrix, eta: f64) -> Result<Vector> {
    check_spd(metric)?;
    let chol = metric.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    Ok(chol.solve(grad) * eta)
}

/// `⟨G⁻¹∇ℓ, ∇ℓ⟩`, nonnegative for every positive definite metric.
pub fn natural_gradient_safety(grad: &Vector, metric: &Matrix) -> Result<f64> {
    Ok(natural_gradient_step(grad, metric, 1.0)?.dot(grad))
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConvexPotential {
    /// `ψ(w) = ½wᵀQw` with `Q` positive definite.
    QuadraticForm(Matrix),
    /// `ψ(w) = Σ w_i log w_i` on the open simplex.
    NegEntropy,
}

impl ConvexPotential {
    pub fn quadratic(q: Matrix) -> Result<Self> {
        check_spd(&q)?;
        Ok(Self::QuadraticForm(q))
    }

    pub fn check_domain(&self, w: &Vector) -> Result<()> {
        match self {
            Self::QuadraticForm(q) if q.nrows() != w.len() => {
                Err(Error::Domain(format!("point has length {}, expected {}", w.len(), q.nrows())))
            }
            Self::QuadraticForm(_) => Ok(()),
            Self::NegEntropy => {
                if let Some(i) = w.iter().position(|&x| !(x > 0.0)) {
                    return Err(Error::Domain(format!("coordinate {i} is {} but must be positive", w[i])));
                }
                let s = w.sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::Domain(format!("coordinates sum to {s}, not 1")));
                }
                Ok(())
            }
        }
    }

    pub fn value(&self, w: &Vector) -> Result<f64> {
        self.check_domain(w)?;
        Ok(match self {
            Self::QuadraticForm(q) => 0.5 * w.dot(&(q * w)),
            Self::NegEntropy => w.iter().map(|x| x * x.ln()).sum(),
        })
    }

    /// `θ = ∇ψ(w)`.
    pub fn gradient(&self, w: &Vector) -> Result<Vector> {
        self.check_domain(w)?;
        Ok(match self {
            Self::QuadraticForm(q) => q * w,
            Self::NegEntropy => w.map(|x| 1.0 + x.ln()),
        })
    }

    /// `g_ij(w) = ∂_i∂_jψ(w)`.
    pub fn metric(&self, w: &Vector) -> Result<Matrix> {
        self.check_domain(w)?;
        Ok(match self {
            Self::QuadraticForm(q) => q.clone(),
            Self::NegEntropy => Matrix::from_diagonal(&w.map(|x| 1.0 / x)),
        })
    }

    pub fn legendre(&self) -> LegendrePair {
        LegendrePair { psi: self.clone() }
    }
}

/// `ψ` together with its convex conjugate `ψ*(θ) = max_w {wᵀθ − ψ(w)}`.
///
/// For negative entropy the gradient map is shift invariant along the
/// all-ones direction, so dual points are canonicalized to zero mean and
/// `ψ*(θ) = log Σ exp(θ_i)` is taken with the simplex constraint built in.
#[derive(Debug, Clone, PartialEq)]
pub struct LegendrePair {
    psi: ConvexPotential,
}

fn log_sum_exp(theta: &Vector) -> f64 {
    let m = theta.max();
    m + theta.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

fn softmax(theta: &Vector) -> Vector {
    let m = theta.max();
    let e = theta.map(|t| (t - m).exp());
    let s = e.sum();
    e / s
}

fn center(theta: &Vector) -> Vector {
    theta.add_scalar(-theta.mean())
}

impl LegendrePair {
    pub fn psi(&self) -> &ConvexPotential {
        &self.psi
    }

    /// `θ = ∇ψ(w)`, zero-mean for negative entropy.
    pub fn to_dual(&self, w: &Vector) -> Result<Vector> {
        let theta = self.psi.gradient(w)?;
        Ok(match self.psi {
            ConvexPotential::NegEntropy => center(&theta),
            ConvexPotential::QuadraticForm(_) => theta,
        })
    }

    /// `w = ∇ψ*(θ)`.
    pub fn to_primal(&self, theta: &Vector) -> Result<Vector> {
        match &self.psi {
            ConvexPotential::QuadraticForm(q) => q.clone().cholesky().map(|c| c.solve(theta)).ok_or(Error::NotPositiveDefinite),
            ConvexPotential::NegEntropy => Ok(softmax(theta)),
        }
    }

    pub fn dual_value(&self, theta: &Vector) -> Result<f64> {
        Ok(match &self.psi {
            ConvexPotential::QuadraticForm(_) => 0.5 * theta.dot(&self.to_primal(theta)?),
            ConvexPotential::NegEntropy => log_sum_exp(theta),
        })
    }

    /// `g^ij(θ) = ∂_i∂_jψ*(θ)`.
    pub fn dual_metric(&self, theta: &Vector) -> Result<Matrix> {
        match &self.psi {
            ConvexPotential::QuadraticForm(q) => q.clone().try_inverse().ok_or(Error::NotPositiveDefinite),
            ConvexPotential::NegEntropy => {
                let p = softmax(theta);
                Ok(Matrix::from_diagonal(&p) - &p * p.transpose())
            }
        }
    }

    /// `ψ(w) + ψ*(θ) − wᵀθ` at `θ = ∇ψ(w)`; zero up to rounding.
    pub fn duality_residual(&self, w: &Vector) -> Result<f64> {
        let theta = self.to_dual(w)?;
        Ok(self.psi.value(w)? + self.dual_value(&theta)? - w.dot(&theta))
    }
}

/// `D_ψ(v, w) = ψ(v) − ψ(w) − ⟨∇ψ(w), v − w⟩`.
pub fn bregman(psi: &ConvexPotential, v: &Vector, w: &Vector) -> Result<f64> {
    Ok(psi.value(v)? - psi.value(w)? - psi.gradient(w)?.dot(&(v - w)))
}

/// Mirror step `∇ψ(w') = ∇ψ(w) − η·grad`, mapped back through `∇ψ*`.
pub fn mirror_step(psi: &ConvexPotential, w: &Vector, grad: &Vector, eta: f64) -> Result<Vector> {
    let pair = psi.legendre();
    let theta = pair.to_dual(w)?;
    pair.to_primal(&(theta - grad * eta))
}

/// Runs mirror descent in the primal and natural-gradient descent in dual
/// coordinates side by side and returns `max_t ‖∇ψ(w_t) − θ_t‖`.
///
/// The dual recursion is `θ' = θ − η·[∇²ψ*(θ)]⁺ ∇²ψ*(θ) ∇ℓ(∇ψ*(θ))`: the
/// natural gradient with respect to the dual metric of the loss viewed as a
/// function of `θ`. For negative entropy the inverse is taken on the
/// zero-mean tangent space and the result is re-centered.
pub fn verify_md_ng_equivalence(
    grad: impl Fn(&Vector) -> Vector,
    psi: &ConvexPotential,
    w0: &Vector,
    eta: f64,
    rounds: usize,
) -> Result<f64> {
    let pair = psi.legendre();
    let mut w = w0.clone();
    let mut theta = pair.to_dual(w0)?;
    let mut worst: f64 = 0.0;
    for _ in 0..rounds {
        w = mirror_step(psi, &w, &grad(&w), eta)?;
        let g_star = pair.dual_metric(&theta)?;
        let primal = pair.to_primal(&theta)?;
        // chain rule: ∇_θ ℓ(∇ψ*(θ)) = ∇²ψ*(θ)·∇ℓ
        let dual_grad = &g_star * grad(&primal);
        let direction = match psi {
            ConvexPotential::QuadraticForm(_) => g_star.clone().lu().solve(&dual_grad).ok_or(Error::NotPositiveDefinite)?,
            ConvexPotential::NegEntropy => {
                // G* annihilates the ones vector; adding J/n makes it invertible
                // without changing the solution on the zero-mean subspace.
                let n = theta.len();
                let lifted = &g_star + Matrix::from_element(n, n, 1.0 / n as f64);
                center(&lifted.lu().solve(&dual_grad).ok_or(Error::NotPositiveDefinite)?)
            }
        };
        theta -= direction * eta;
        if let ConvexPotential::NegEntropy = psi {
            theta = center(&theta);
        }
        worst = worst.max((pair.to_dual(&w)? - &theta).norm());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn saddle() -> LossSpec {
        LossSpec::quadratic(Matrix::from_diagonal(&v(&[1.0, -1.0])), Vector::zeros(2)).unwrap()
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let a = Matrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + Matrix::identity(n, n) * 0.1
    }

    #[test]
    fn hessian_examples() {
        let q = LossSpec::quadratic(Matrix::from_diagonal(&v(&[2.0, 3.0])), Vector::zeros(2)).unwrap();
        assert_eq!(hessian(&q, &v(&[5.0, -1.0])).unwrap(), Matrix::from_diagonal(&v(&[2.0, 3.0])));
        assert_eq!(hessian(&saddle(), &v(&[1.0, 2.0])).unwrap(), Matrix::from_diagonal(&v(&[1.0, -1.0])));
    }

    #[test]
    fn black_box_quartic_hessian() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..2.0)).collect();
        let (a, b, k) = (c[0], c[1], c[2]);
        let loss = LossSpec::black_box(move |w| a * w[0].powi(4) + b * w[0] * w[0] * w[1] * w[1] + k * w[1].powi(4));
        for _ in 0..10 {
            let w = v(&[rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
            let (x, y) = (w[0], w[1]);
            let exact = Matrix::from_row_slice(
                2,
                2,
                &[12.0 * a * x * x + 2.0 * b * y * y, 4.0 * b * x * y, 4.0 * b * x * y, 2.0 * b * x * x + 12.0 * k * y * y],
            );
            let h = hessian(&loss, &w).unwrap();
            assert!((&h - &exact).norm() / exact.norm() <= 1e-4);
            assert_eq!(h, h.transpose());
        }
    }

    #[test]
    fn newton_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_spd(&mut rng, 3);
        let b = Vector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let loss = LossSpec::quadratic(a.clone(), &a * &b).unwrap();
        let w = Vector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        // with b^(n) = A b the minimizer is −b, and H⁻¹∇ℓ = w + b
        let step = newton_step(&loss, &w, 1.0).unwrap();
        assert!((&w - &step.step + &b).norm() < 1e-10);
        assert!((&step.step - (&w + &b)).norm() < 1e-10);
        assert!(newton_safety(&loss, &w).unwrap() > 0.0);
        assert!(newton_safety(&loss, &-&b).unwrap().abs() < 1e-20);

        let s = newton_step(&saddle(), &v(&[1.0, 2.0]), 1.0).unwrap();
        assert_eq!(s.step, v(&[1.0, 2.0]));
        assert_eq!(newton_safety(&saddle(), &v(&[1.0, 2.0])).unwrap(), -3.0);
    }

    #[test]
    fn singular_hessian_reports_smallest_singular_value() {
        let loss = LossSpec::quadratic(Matrix::from_diagonal(&v(&[1.0, 0.0])), Vector::zeros(2)).unwrap();
        match newton_step(&loss, &v(&[1.0, 1.0]), 1.0) {
            Err(Error::Singular { min_sv }) => assert_eq!(min_sv, 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn natural_gradient_examples() {
        let g = v(&[2.0, 4.0]);
        assert_eq!(natural_gradient_step(&g, &Matrix::identity(2, 2), 0.5).unwrap(), &g * 0.5);
        let d = natural_gradient_step(&g, &Matrix::from_diagonal(&v(&[1.0, 4.0])), 1.0).unwrap();
        assert!((d - v(&[2.0, 1.0])).norm() < 1e-15);
        assert_eq!(
            natural_gradient_step(&g, &Matrix::from_diagonal(&v(&[1.0, -1.0])), 1.0),
            Err(Error::NotPositiveDefinite)
        );
    }

    #[test]
    fn natural_gradient_is_always_safe() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let n = rng.random_range(1..6);
            let g = random_spd(&mut rng, n);
            let grad = Vector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
            assert!(natural_gradient_safety(&grad, &g).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn legendre_examples() {
        let id = ConvexPotential::quadratic(Matrix::identity(2, 2)).unwrap().legendre();
        let w = v(&[0.3, -1.1]);
        assert_eq!(id.to_dual(&w).unwrap(), w);
        assert_eq!(id.to_primal(&w).unwrap(), w);
        assert!((id.dual_value(&w).unwrap() - id.psi().value(&w).unwrap()).abs() < 1e-15);

        let two = ConvexPotential::quadratic(Matrix::identity(2, 2) * 2.0).unwrap().legendre();
        let theta = v(&[1.0, 3.0]);
        assert!((two.dual_value(&theta).unwrap() - 0.25 * theta.norm_squared()).abs() < 1e-14);

        let ent = ConvexPotential::NegEntropy.legendre();
        assert!(ent.duality_residual(&v(&[0.5, 0.5])).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn duality_and_inverse_metrics() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..50 {
            let n = rng.random_range(2..5);
            let q = ConvexPotential::quadratic(random_spd(&mut rng, n)).unwrap();
            let w = Vector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
            let pair = q.legendre();
            assert!(pair.duality_residual(&w).unwrap().abs() <= 1e-10);
            let prod = q.metric(&w).unwrap() * pair.dual_metric(&pair.to_dual(&w).unwrap()).unwrap();
            assert!((prod - Matrix::identity(n, n)).norm() <= 1e-8);

            let raw = Vector::from_fn(n, |_, _| rng.random_range(0.1..1.0));
            let p = &raw / raw.sum();
            let ent = ConvexPotential::NegEntropy.legendre();
            assert!(ent.duality_residual(&p).unwrap().abs() <= 1e-10);
            assert!((ent.to_primal(&ent.to_dual(&p).unwrap()).unwrap() - &p).norm() <= 1e-12);
            // inverse on the tangent space {x : Σx = 0}
            let proj = Matrix::identity(n, n) - Matrix::from_element(n, n, 1.0 / n as f64);
            let prod = &proj * ConvexPotential::NegEntropy.metric(&p).unwrap() * ent.dual_metric(&ent.to_dual(&p).unwrap()).unwrap() * &proj;
            assert!((prod - &proj).norm() <= 1e-8);
        }
    }

    #[test]
    fn bregman_examples() {
        let euclid = ConvexPotential::quadratic(Matrix::identity(2, 2)).unwrap();
        let (a, b) = (v(&[1.0, 2.0]), v(&[-0.5, 0.25]));
        assert!((bregman(&euclid, &a, &b).unwrap() - 0.5 * (&a - &b).norm_squared()).abs() < 1e-14);
        assert_eq!(bregman(&euclid, &a, &a).unwrap(), 0.0);
        let (p, q) = (v(&[0.3, 0.7]), v(&[0.5, 0.5]));
        let kl: f64 = (0..2).map(|i| p[i] * (p[i] / q[i]).ln()).sum();
        assert!((bregman(&ConvexPotential::NegEntropy, &p, &q).unwrap() - kl).abs() < 1e-14);
        assert!(bregman(&ConvexPotential::NegEntropy, &v(&[0.0, 1.0]), &q).is_err());
    }

    #[test]
    fn mirror_step_examples() {
        let euclid = ConvexPotential::quadratic(Matrix::identity(2, 2)).unwrap();
        let (w, g) = (v(&[0.2, 0.4]), v(&[1.0, -3.0]));
        assert!((mirror_step(&euclid, &w, &g, 0.1).unwrap() - (&w - &g * 0.1)).norm() < 1e-15);
        let p = v(&[0.2, 0.3, 0.5]);
        let g = v(&[1.0, -2.0, 0.5]);
        let got = mirror_step(&ConvexPotential::NegEntropy, &p, &g, 0.3).unwrap();
        let raw = Vector::from_fn(3, |i, _| p[i] * (-0.3 * g[i]).exp());
        assert!((got - &raw / raw.sum()).norm() < 1e-15);
        let same = mirror_step(&ConvexPotential::NegEntropy, &p, &Vector::zeros(3), 0.3).unwrap();
        assert!((same - &p).norm() < 1e-15);
    }

    #[test]
    fn mirror_descent_matches_dual_natural_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let q = random_spd(&mut rng, 3);
        let a = random_spd(&mut rng, 3);
        let b = Vector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let psi = ConvexPotential::quadratic(q).unwrap();
        let dev = verify_md_ng_equivalence(|w| &a * w + &b, &psi, &v(&[0.5, -0.2, 0.1]), 0.05, 50).unwrap();
        assert!(dev <= 1e-10, "{dev}");

        let c = v(&[0.3, -0.1, 0.8, 0.0]);
        let w0 = v(&[0.25, 0.25, 0.25, 0.25]);
        let dev = verify_md_ng_equivalence(|_| c.clone(), &ConvexPotential::NegEntropy, &w0, 0.1, 50).unwrap();
        assert!(dev <= 1e-8, "{dev}");

        let dev = verify_md_ng_equivalence(|w| Vector::zeros(w.len()), &ConvexPotential::NegEntropy, &w0, 0.1, 50).unwrap();
        assert_eq!(dev, 0.0);
    }

    #[test]
    fn mirror_descent_is_safe_along_trajectories() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a = random_spd(&mut rng, 3);
        let quad = ConvexPotential::quadratic(random_spd(&mut rng, 3)).unwrap();
        let mut w = v(&[0.2, -0.4, 0.9]);
        for _ in 0..100 {
            let g = &a * &w;
            let next = mirror_step(&quad, &w, &g, 0.05).unwrap();
            assert!((&w - &next).dot(&(g * 0.05)) >= -1e-9);
            w = next;
        }
        let c = v(&[0.3, -0.1, 0.8]);
        let mut p = v(&[0.2, 0.3, 0.5]);
        for _ in 0..100 {
            let g = &c + &p;
            let next = mirror_step(&ConvexPotential::NegEntropy, &p, &g, 0.2).unwrap();
            assert!((&p - &next).dot(&(g * 0.2)) >= -1e-9);
            p = next;
        }
    }
}
