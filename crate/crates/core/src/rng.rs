//! Deterministic RNG substreams for the count hierarchy.
//!
//! Every stochastic level of the model draws from its own counter-based
//! stream keyed by (seed, level, bin). Draws therefore do not depend on the
//! order bins are visited in, and per-bin work could run in parallel without
//! changing any result.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One stochastic level of the generative or conditional hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Level {
    IdealContinuum = 0,
    IdealLine,
    ThinContinuum,
    ThinLine,
    Blur,
    Background,
    StripBackground,
    Deblur,
    DeblurLost,
    SplitSources,
    RestoreContinuum,
    RestoreLine,
}

/// Stream for `bin` at `level` under `seed`; always starts at position zero.
pub(crate) fn substream(seed: u64, level: Level, bin: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((level as u64) << 40) | (bin as u64));
    rng
}
