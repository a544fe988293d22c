//! Counter-based random streams.
//!
//! Every stochastic task derives its own generator from the master seed and a
//! small tuple of indices, so results do not depend on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_xoshiro::Xoshiro256PlusPlus;

/// Generator type handed out by [`stream`].
pub type StreamRng = Xoshiro256PlusPlus;

/// Stream domains, kept distinct so that e.g. trajectory 3 and ensemble 3 never share bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    TrueTrajectory = 1,
    Hypothetical = 2,
    Correlator = 3,
    Bootstrap = 4,
    Python = 5,
}

/// Generator for `(master_seed, domain, a, b)`. The index tuple keys a ChaCha8
/// generator, which in turn seeds a fast xoshiro256++ generator.
pub fn stream(master_seed: u64, domain: Domain, a: u64, b: u64) -> StreamRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..].copy_from_slice(&b.to_le_bytes());
    let mut keyed = ChaCha8Rng::from_seed(key);
    Xoshiro256PlusPlus::from_rng(&mut keyed)
}
