//! Seed fan-out.
//!
//! Every experiment is driven by one 64-bit seed. Purposes (latent draws,
//! image-side unique features, text-side unique features, batching, prompts,
//! initialisation, ...) get their own ChaCha key derived from the seed and a
//! tag, and individual work items (batch `i`, trial `j`) get their own ChaCha
//! stream under that key. Work items can therefore be evaluated in any order
//! or on any thread and still reproduce bit-for-bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(tag: &str) -> u64 {
    tag.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for a named purpose.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    splitmix64(seed ^ splitmix64(fnv1a(tag)))
}

/// Independent generator for work item `index` of purpose `tag`.
pub fn stream(seed: u64, tag: &str, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, tag));
    rng.set_stream(index);
    rng
}

/// The three sampling streams used when drawing image-text pairs.
///
/// Keeping latent, image-side and text-side randomness on separate streams
/// means that e.g. swapping the text-side sampler leaves the latents and the
/// images of a run untouched.
#[derive(Clone, Debug)]
pub struct SampleRng {
    pub latent: StreamRng,
    pub xi: StreamRng,
    pub zeta: StreamRng,
}

impl SampleRng {
    pub fn new(seed: u64) -> Self {
        Self::substream(seed, 0)
    }

    /// Streams for work item `index` (a batch, a trial, ...).
    pub fn substream(seed: u64, index: u64) -> Self {
        Self {
            latent: stream(seed, "latent", index),
            xi: stream(seed, "xi", index),
            zeta: stream(seed, "zeta", index),
        }
    }
}
