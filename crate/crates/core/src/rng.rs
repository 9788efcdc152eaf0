//! Seed derivation. Every consumer of randomness gets its own ChaCha stream,
//! selected by hashing a label, so adding a consumer never perturbs the
//! numbers another one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type DidRng = ChaCha8Rng;

/// 64-bit FNV-1a.
fn stream_id(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Generator for the stream `label` under the run-wide `seed`.
pub fn derive_rng(seed: u64, label: &str) -> DidRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(label));
    rng
}
