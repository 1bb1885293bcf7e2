//! Seeded random streams.
//!
//! A run has one root seed. Every consumer (masking, dropout, synthesis,
//! splitting, ...) derives its own generator from the root, a stream tag and
//! up to two indices, so no component shares state with another and results
//! do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Mask = 3,
    Dropout = 4,
    ValidationMask = 5,
    EvalMask = 6,
    Synth = 7,
    Split = 8,
    McDropout = 9,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for `(root, stream, a, b)`.
pub fn stream(root: u64, which: Stream, a: u64, b: u64) -> StreamRng {
    let mut h = splitmix(root);
    h = splitmix(h ^ which as u64);
    h = splitmix(h ^ a);
    h = splitmix(h ^ b.rotate_left(17));
    ChaCha8Rng::seed_from_u64(h)
}
