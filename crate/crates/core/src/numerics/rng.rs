//! Seedable xoshiro256** streams.

use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256StarStar;

use super::matrix::Matrix;

pub type Rng = Xoshiro256StarStar;

pub fn seeded(seed: u64) -> Rng {
    Xoshiro256StarStar::seed_from_u64(seed)
}

/// Independent stream derived from `seed` and a stream tag, so that two
/// consumers of the same seed never share draws.
pub fn substream(seed: u64, tag: &str) -> Rng {
    // FNV-1a over the tag, folded into the seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    seeded(seed ^ h.rotate_left(17))
}

pub fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

pub fn normal_matrix(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| std * normal(rng)).collect();
    Matrix::new(rows, cols, data).expect("sized by construction")
}

/// Entries drawn from `uniform(-bound, bound)`.
pub fn uniform_matrix(rng: &mut Rng, rows: usize, cols: usize, bound: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Matrix::new(rows, cols, data).expect("sized by construction")
}
