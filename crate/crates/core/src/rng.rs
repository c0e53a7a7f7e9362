//! Reproducible per-replica random streams.
//!
//! Every replica draws from its own ChaCha8 stream, keyed by the master seed
//! and an experiment tag and selected by the replica id, so results do not
//! depend on how replicas are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub type StreamRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for replica `replica` of the experiment identified by `tag`.
pub fn stream(seed: u64, tag: u64, replica: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(tag)));
    rng.set_stream(replica);
    rng
}

/// Hashes a label into a stream tag.
pub fn tag(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Runs `f` for replicas `0..n` in parallel and returns results in replica order.
pub fn par_replicas<T, F>(n: usize, seed: u64, tag: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, &mut StreamRng) -> T + Sync,
{
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, tag, i);
            f(i, &mut rng)
        })
        .collect()
}
