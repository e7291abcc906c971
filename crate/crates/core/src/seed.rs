//! Deterministic expansion of one master seed into independent RNG streams.
//!
//! `stream_rng(seed, s)` is `ChaCha8Rng::seed_from_u64(seed)` switched to the
//! ChaCha stream number `s as u64`. Streams share the key but never overlap,
//! so drawing more from one component never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Env = 1,
    ActorInit = 2,
    CriticInit = 3,
    Exploration = 4,
    Candidates = 5,
    Replay = 6,
    Evaluation = 7,
    ValueSamples = 8,
    Fit = 9,
    PolicyGradient = 10,
    Projections = 11,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
