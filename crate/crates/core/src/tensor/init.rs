use super::{cst, Scalar, Shape4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `√(6 / (fan_in + fan_out))` for a (out, in, kh, kw) kernel shape.
pub fn glorot_limit(shape: Shape4) -> f64 {
    let receptive = shape.h * shape.w;
    let fan_in = shape.c * receptive;
    let fan_out = shape.n * receptive;
    (6.0 / (fan_in + fan_out).max(1) as f64).sqrt()
}

/// Fan-balanced uniform samples on `[−L, L]`, deterministic in `seed`.
pub fn init_weights<S: Scalar>(shape: Shape4, seed: u64) -> Vec<S> {
    let limit = glorot_limit(shape);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..shape.len()).map(|_| cst(rng.gen_range(-limit..=limit))).collect()
}
