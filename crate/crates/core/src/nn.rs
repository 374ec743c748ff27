//! Single-layer feedback alignment: backpropagated versus feedback error
//! signals and the inner product between them.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

/// Relative singular-value cutoff for [`pseudoinverse`].
pub const PINV_CUTOFF: f64 = 1e-12;

/// Moore–Penrose pseudoinverse with a `1e-12` relative cutoff.
pub fn pseudoinverse(w: &Matrix) -> Matrix {
    linalg::pseudoinverse(w, PINV_CUTOFF)
}

/// Forward weights `W` (`out×in`) and feedback weights `B` (`in×out`).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPair {
    w: Matrix,
    b: Matrix,
}

impl LayerPair {
    pub fn new(w: Matrix, b: Matrix) -> Result<Self> {
        if b.shape() != (w.ncols(), w.nrows()) {
            return Err(Error::InvalidInput(format!(
                "W is {}×{} so B must be {}×{}, got {}×{}",
                w.nrows(),
                w.ncols(),
                w.ncols(),
                w.nrows(),
                b.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { w, b })
    }

    /// `B = α·W†`.
    pub fn scaled_pseudoinverse(w: Matrix, alpha: f64) -> Self {
        let b = pseudoinverse(&w) * alpha;
        Self { w, b }
    }

    pub fn forward(&self) -> &Matrix {
        &self.w
    }

    pub fn feedback(&self) -> &Matrix {
        &self.b
    }

    fn check_error(&self, e: &Vector) -> Result<()> {
        if e.len() == self.w.nrows() {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("error has length {}, expected {}", e.len(), self.w.nrows())))
        }
    }
}

/// `(δ_BP, δ_FA) = (Wᵀe, Be)`.
pub fn deltas(pair: &LayerPair, e: &Vector) -> Result<(Vector, Vector)> {
    pair.check_error(e)?;
    Ok((pair.w.transpose() * e, &pair.b * e))
}

/// `⟨δ_FA, δ_BP⟩`. Equals `α·eᵀWW†e ≥ 0` when `B = αW†`.
pub fn fa_safety(pair: &LayerPair, e: &Vector) -> Result<f64> {
    let (bp, fa) = deltas(pair, e)?;
    Ok(fa.dot(&bp))
}

/// Angle between `δ_FA` and `δ_BP` in degrees.
pub fn alignment_angle(pair: &LayerPair, e: &Vector) -> Result<f64> {
    let (bp, fa) = deltas(pair, e)?;
    let (nb, nf) = (bp.norm(), fa.norm());
    if nb == 0.0 {
        return Err(Error::UndefinedAngle("backpropagated delta"));
    }
    if nf == 0.0 {
        return Err(Error::UndefinedAngle("feedback delta"));
    }
    Ok((fa.dot(&bp) / (nb * nf)).clamp(-1.0, 1.0).acos().to_degrees())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{orthonormalize, projection_residuals};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Random `r×c` matrix of rank at most `k`.
    fn low_rank(rng: &mut ChaCha8Rng, r: usize, c: usize, k: usize) -> Matrix {
        random_matrix(rng, r, k) * random_matrix(rng, k, c)
    }

    #[test]
    fn pseudoinverse_examples() {
        assert_eq!(pseudoinverse(&Matrix::identity(3, 3)), Matrix::identity(3, 3));
        let d = pseudoinverse(&Matrix::from_diagonal(&v(&[2.0, 0.0])));
        assert!((d - Matrix::from_diagonal(&v(&[0.5, 0.0]))).norm() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random_matrix(&mut rng, 3, 2);
        let p = pseudoinverse(&w);
        assert!((&w * &p * &w - &w).norm() < 1e-10);
        assert!((&p * &w * &p - &p).norm() < 1e-10);
        let wp = &w * &p;
        let pw = &p * &w;
        assert!((&wp - wp.transpose()).norm() < 1e-10);
        assert!((&pw - pw.transpose()).norm() < 1e-10);
    }

    #[test]
    fn deltas_examples() {
        let pair = LayerPair::new(Matrix::identity(2, 2), Matrix::identity(2, 2)).unwrap();
        let e = v(&[1.0, -2.0]);
        let (bp, fa) = deltas(&pair, &e).unwrap();
        assert_eq!(bp, e);
        assert_eq!(fa, e);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = random_matrix(&mut rng, 3, 4);
        let pair = LayerPair::scaled_pseudoinverse(w.clone(), 1.0);
        let e = v(&[0.3, 1.0, -0.4]);
        assert_eq!(deltas(&pair, &e).unwrap().1, pseudoinverse(&w) * &e);
        assert!(deltas(&pair, &v(&[1.0])).is_err());
        assert!(LayerPair::new(w, Matrix::zeros(3, 4)).is_err());
    }

    #[test]
    fn fa_safety_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..1000 {
            let (r, c) = (rng.random_range(1..6), rng.random_range(1..6));
            let w = if i % 3 == 0 { low_rank(&mut rng, r, c, 1) } else { random_matrix(&mut rng, r, c) };
            let alpha = rng.random_range(0.1..3.0);
            let e = Vector::from_fn(r, |_, _| rng.random_range(-1.0..1.0));
            let pair = LayerPair::scaled_pseudoinverse(w.clone(), alpha);
            let s = fa_safety(&pair, &e).unwrap();
            assert!(s >= -1e-12);
            let expected = alpha * e.dot(&(&w * pseudoinverse(&w) * &e));
            assert!((s - expected).abs() <= 1e-10);
            let flipped = LayerPair::scaled_pseudoinverse(w, -alpha);
            assert!(fa_safety(&flipped, &e).unwrap() <= 1e-12);
        }
    }

    #[test]
    fn fa_safety_is_linear_in_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random_matrix(&mut rng, 3, 5);
        let e = v(&[0.2, -0.7, 1.1]);
        let base = fa_safety(&LayerPair::scaled_pseudoinverse(w.clone(), 1.0), &e).unwrap();
        for alpha in [0.5, 2.0] {
            let s = fa_safety(&LayerPair::scaled_pseudoinverse(w.clone(), alpha), &e).unwrap();
            assert!((s / base - alpha).abs() <= 1e-12);
        }
    }

    #[test]
    fn null_space_error_gives_zero() {
        // W has rank 1 with column space spanned by (1, 1, 0)
        let w = Matrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 0.0, 0.0]);
        let pair = LayerPair::scaled_pseudoinverse(w, 1.0);
        let s = fa_safety(&pair, &v(&[1.0, -1.0, 3.0])).unwrap();
        assert!(s.abs() < 1e-14);
    }

    #[test]
    fn alignment_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = orthonormalize(&random_matrix(&mut rng, 3, 3)).unwrap();
        let pair = LayerPair::new(q.clone(), q.transpose()).unwrap();
        assert!(alignment_angle(&pair, &v(&[1.0, 0.5, -0.2])).unwrap() < 1e-5);

        let pair = LayerPair::new(Matrix::identity(2, 2), Matrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0])).unwrap();
        assert!((alignment_angle(&pair, &v(&[1.0, 2.0])).unwrap() - 90.0).abs() < 1e-12);

        let pair = LayerPair::new(random_matrix(&mut rng, 2, 3), random_matrix(&mut rng, 3, 2)).unwrap();
        let e = v(&[0.4, -0.9]);
        let (bp, fa) = deltas(&pair, &e).unwrap();
        let want = (fa.dot(&bp) / (fa.norm() * bp.norm())).acos().to_degrees();
        let got = alignment_angle(&pair, &e).unwrap();
        assert!((0.0..=180.0).contains(&got));
        assert!((got - want).abs() < 1e-12);

        let zero = LayerPair::new(Matrix::zeros(2, 2), Matrix::identity(2, 2)).unwrap();
        assert_eq!(alignment_angle(&zero, &e), Err(Error::UndefinedAngle("backpropagated delta")));
    }

    proptest! {
        #[test]
        fn w_pinv_is_orthogonal_projection(seed in any::<u64>(), r in 1usize..5, c in 1usize..5, k in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = low_rank(&mut rng, r, c, k);
            let (idem, sym) = projection_residuals(&(&w * pseudoinverse(&w)));
            prop_assert!(idem < 1e-9 && sym < 1e-9);
        }
    }
}
