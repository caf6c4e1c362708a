//! Named random streams split from one master seed.
//!
//! Every stochastic primitive of a run draws from its own ChaCha8 stream:
//! the key is derived from the master seed and the 64-bit stream id
//! selects an independent counter space. Two runs that share a seed
//! therefore share every stream bit for bit, and changing how one stream
//! is consumed never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers. Per-server streams are offset by the server index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    DedicatedArrival(usize),
    LbsArrival,
    Theta,
    Service(usize),
    Residual(usize),
    SdeNoise(usize),
    TieShuffle,
}

impl Stream {
    fn id(self) -> u64 {
        const BLOCK: u64 = 1 << 32;
        match self {
            Stream::DedicatedArrival(i) => BLOCK + i as u64,
            Stream::LbsArrival => 2 * BLOCK,
            Stream::Theta => 3 * BLOCK,
            Stream::Service(i) => 4 * BLOCK + i as u64,
            Stream::Residual(i) => 5 * BLOCK + i as u64,
            Stream::SdeNoise(i) => 6 * BLOCK + i as u64,
            Stream::TieShuffle => 7 * BLOCK,
        }
    }
}

/// Open the generator for `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Seed of replication `index` under a master seed (splitmix64 finalizer).
pub fn replication_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(index.wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
