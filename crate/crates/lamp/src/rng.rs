//! Seeded random-number streams.
//!
//! Every source of randomness in the pipeline draws from a `ChaCha8` stream
//! derived from one root seed plus a stream name (`"init"`, `"drop"`,
//! `"gumbel"`, `"split"`, `"kmeans"`, ...). Two consequences:
//!
//! * runs with the same root seed are bit-for-bit reproducible, and
//! * consuming more randomness in one stream (say, a larger graph needing
//!   more drop decisions) never perturbs the draws of any other stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a root seed and a stream name into a 64-bit sub-seed.
///
/// FNV-1a over the name, then a splitmix64 finaliser so that adjacent root
/// seeds do not yield adjacent sub-seeds.
fn derive(root: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = root ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A named random stream derived from `root`.
///
/// ```
/// use rand::Rng;
/// let mut a = lamp::rng::stream(7, "drop");
/// let mut b = lamp::rng::stream(7, "drop");
/// let mut c = lamp::rng::stream(7, "gumbel");
/// assert_eq!(a.gen::<u64>(), b.gen::<u64>());
/// assert_ne!(a.gen::<u64>(), c.gen::<u64>());
/// ```
pub fn stream(root: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, name))
}

/// A derived 64-bit seed, for components that take a root seed of their
/// own — e.g. the per-run training seeds of a sensitivity study.
pub fn sub_seed(root: u64, name: &str) -> u64 {
    derive(root, name)
}

/// A named stream further indexed by an epoch (or run) counter.
///
/// Used where fresh draws are needed every epoch but epoch `e` must not
/// depend on how much randomness earlier epochs consumed.
pub fn stream_indexed(root: u64, name: &str, index: u64) -> ChaCha8Rng {
    let mut rng = stream(root, name);
    rng.set_stream(index);
    rng
}
