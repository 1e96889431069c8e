//! Counter-based random number derivation.
//!
//! Monte Carlo runs must produce identical results no matter how frames are
//! scheduled across worker threads. Instead of sharing one sequential RNG,
//! every frame gets its own ChaCha stream addressed by (seed, context, frame
//! index): the noise of frame k is a pure function of those three values, so
//! any execution order reconstructs the same realizations.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Frame indices must fit below this bound so they can share the 64-bit
/// ChaCha stream id with a context tag.
pub const MAX_FRAMES_PER_CONTEXT: u64 = 1 << 40;

/// One round of the splitmix64 output function. Used to derive independent
/// sub-seeds (per member, per run phase) from a master seed.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a sub-seed from a master seed and a small tag, e.g. a member index
/// or a phase id. Distinct tags give statistically independent seeds.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    splitmix64(master ^ splitmix64(tag))
}

/// RNG for one frame. `context` distinguishes independent frame populations
/// under the same seed (one per SNR point, per dataset, ...); `frame` is the
/// frame counter within that context.
pub fn frame_rng(seed: u64, context: u32, frame: u64) -> ChaCha8Rng {
    assert!(
        frame < MAX_FRAMES_PER_CONTEXT,
        "frame index {frame} exceeds the per-context stream capacity"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((context as u64) << 40) | frame);
    rng
}
