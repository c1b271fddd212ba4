//! Counter-based random streams.
//!
//! Replication `r` of an experiment seeded with `master` draws from
//! ChaCha8 keyed by `master` on stream `r`. Streams never overlap, so the
//! result of a replication does not depend on which thread ran it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Generator for a single seeded computation.
pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent generator for replication `r` under `master`.
pub fn replication_rng(master: u64, r: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(r);
    rng
}

/// Derives a sub-seed so that nested experiments (calibration probes,
/// placebo cells) get streams disjoint from their parent's.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = master ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
