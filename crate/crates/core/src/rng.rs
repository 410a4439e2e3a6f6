//! Seedable, counter-based random streams.
//!
//! Every stochastic operation draws from a ChaCha stream addressed by
//! `(seed, stream id)`, so any step can be replayed without consuming the
//! randomness of earlier steps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Named purposes for random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Shuffle { epoch: u64 },
    Dropout { step: u64 },
    Permute { step: u64 },
    Data,
    Bench,
}

impl Stream {
    fn id(self) -> u64 {
        const TAG: u64 = 1 << 60;
        match self {
            Stream::Init => 0,
            Stream::Data => 1,
            Stream::Bench => 2,
            Stream::Shuffle { epoch } => TAG | (epoch & (TAG - 1)),
            Stream::Dropout { step } => (2 * TAG) | (step & (TAG - 1)),
            Stream::Permute { step } => (3 * TAG) | (step & (TAG - 1)),
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}
