use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream `stream` of the generator seeded by `seed`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub const STREAM_INITIAL: u64 = 1;
pub const STREAM_CERTIFY: u64 = 2;
pub const STREAM_KORN: u64 = 3;
pub const STREAM_SAMPLES: u64 = 4;
