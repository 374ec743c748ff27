//! Seeded point samplers. Each sample index owns its own ChaCha stream, so
//! serial and parallel loops draw identical points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::game::FeasibleSet;
use crate::linalg::Vector;

/// Independent RNG for sample `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn uniform_in_ball(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Vector {
    if dim == 0 {
        return Vector::zeros(0);
    }
    let mut dir = Vector::from_fn(dim, |_, _| StandardNormal.sample(rng));
    let mut n = dir.norm();
    while n == 0.0 {
        dir = Vector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        n = dir.norm();
    }
    let r = radius * rng.random::<f64>().powf(1.0 / dim as f64);
    dir * (r / n)
}

fn dirichlet_ones(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..dim).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Uniform point in `region`. Unbounded regions fall back to the box `[-1, 1]^dim`.
pub fn sample_point(region: &FeasibleSet, dim: usize, rng: &mut ChaCha8Rng) -> Vector {
    match region {
        FeasibleSet::Unconstrained => Vector::from_fn(dim, |_, _| rng.random_range(-1.0..=1.0)),
        FeasibleSet::Ball { center, radius } => center + uniform_in_ball(rng, dim, *radius),
        FeasibleSet::Box { lo, hi } => Vector::from_fn(dim, |i, _| {
            if lo[i] == hi[i] {
                lo[i]
            } else {
                rng.random_range(lo[i]..=hi[i])
            }
        }),
        FeasibleSet::BlockSimplex { sizes } => {
            Vector::from_vec(sizes.iter().flat_map(|&s| dirichlet_ones(rng, s)).collect())
        }
        FeasibleSet::BlockBall { sizes, radius } => Vector::from_vec(
            sizes
                .iter()
                .flat_map(|&s| uniform_in_ball(rng, s, *radius).iter().copied().collect::<Vec<_>>())
                .collect(),
        ),
    }
}

/// Uniform unit vector.
pub fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vector {
    loop {
        let v = Vector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        let n = v.norm();
        if n > 0.0 {
            return v / n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_stay_in_region() {
        let regions = [
            FeasibleSet::unit_ball(3),
            FeasibleSet::Box { lo: Vector::from_vec(vec![0.0, -2.0, 1.0]), hi: Vector::from_vec(vec![1.0, 2.0, 1.0]) },
            FeasibleSet::BlockSimplex { sizes: vec![2, 1] },
            FeasibleSet::BlockBall { sizes: vec![2, 1], radius: 0.5 },
        ];
        for region in &regions {
            for i in 0..200 {
                let p = sample_point(region, 3, &mut stream(7, i));
                assert!(region.contains(&p, 1e-12), "{region:?} {p}");
            }
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = sample_point(&FeasibleSet::unit_ball(2), 2, &mut stream(1, 5));
        let b = sample_point(&FeasibleSet::unit_ball(2), 2, &mut stream(1, 5));
        let c = sample_point(&FeasibleSet::unit_ball(2), 2, &mut stream(1, 6));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn ball_radius_distribution() {
        // P(‖x‖ ≤ 1/2) = 1/4 in the unit disk
        let n = 20_000;
        let inside = (0..n)
            .filter(|&i| sample_point(&FeasibleSet::unit_ball(2), 2, &mut stream(3, i)).norm() <= 0.5)
            .count();
        assert!((inside as f64 / n as f64 - 0.25).abs() < 0.01);
    }
}
