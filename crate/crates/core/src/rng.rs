//! Reproducible random streams.
//!
//! Every stream is a ChaCha8 generator keyed by `(seed, domain)` and selected
//! by a 64-bit stream id, so draws for one purpose (an epoch's shuffle, one
//! sample's crop) never depend on how many draws happened elsewhere. ChaCha is
//! counter-based, which also makes streams cheap to recreate when resuming.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream(seed: u64, domain: u64, id: u64) -> ChaCha8Rng {
    // splitmix64 of the (seed, domain) pair as the 64-bit key
    let mut z = seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    let mut rng = ChaCha8Rng::seed_from_u64(z);
    rng.set_stream(id);
    rng
}
