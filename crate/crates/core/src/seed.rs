//! Counter-based seed derivation.
//!
//! Every random stream in the pipeline is keyed by the master seed plus a
//! short path of counters, e.g. `(MEASUREMENTS, record_index)` or
//! `(COLLOCATION, epoch, step)`. Each path element is folded in with the
//! SplitMix64 finalizer, so streams are independent of evaluation order and
//! a parallel build draws exactly what a serial build draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Distinct constants keep streams from colliding.
pub mod stream {
    pub const INPUT_FUNCTION: u64 = 0x01;
    pub const MEASUREMENTS: u64 = 0x02;
    pub const COLLOCATION: u64 = 0x03;
    pub const SHUFFLE: u64 = 0x04;
    pub const INIT_SOL: u64 = 0x05;
    pub const INIT_HID: u64 = 0x06;
    pub const TEST_FUNCTION: u64 = 0x07;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `master` and a counter path.
pub fn derive(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

/// Deterministic RNG for a derived stream.
pub fn rng(master: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, path))
}
