//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded through
//! [`derive`], so a run is reproducible from one 64-bit seed on any machine.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(a ^ splitmix64(b))`; used for `(base_seed, episode_index)`
/// layout seeds and for every other two-part key.
pub fn mix(a: u64, b: u64) -> u64 {
    splitmix64(a ^ splitmix64(b))
}

/// FNV-1a over a label, folded into `seed` with [`mix`].
pub fn mix_label(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01B3);
    }
    mix(seed, h)
}

pub fn stream(seed: u64, label: &str) -> Rng {
    Rng::seed_from_u64(mix_label(seed, label))
}

/// Independent streams used by training.
///
/// The entropy-bound stream is separate from everything the plain policy
/// gradient consumes, so disabling the bound cannot shift rollout randomness.
#[derive(Clone, Debug)]
pub struct Streams {
    pub init: Rng,
    pub latent: Rng,
    pub action: Rng,
    pub bound: Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self {
            init: stream(seed, "init"),
            latent: stream(seed, "latent"),
            action: stream(seed, "action"),
            bound: stream(seed, "bound"),
        }
    }
}
