use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded generator on an independent stream.
///
/// Different `stream` values under one seed give non-overlapping sequences,
/// which lets callers hand out generators per task, batch or episode without
/// threading a single generator through the whole program.
pub fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id for a `(purpose, index)` pair.
pub(crate) fn stream(purpose: u32, index: u64) -> u64 {
    ((purpose as u64) << 48) ^ index
}
