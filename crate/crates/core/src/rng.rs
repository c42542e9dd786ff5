//! Named, independent random substreams derived from one run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Substream identifiers. Each maps to a distinct ChaCha stream of the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Substream {
    /// Arrivals on one lane.
    Arrivals(usize),
    /// First-transmission offsets of CAMs.
    CamPhase,
    /// Per-message fading draws.
    Fading,
}

impl Substream {
    fn id(self) -> u64 {
        match self {
            Substream::CamPhase => 1,
            Substream::Fading => 2,
            Substream::Arrivals(lane) => 1000 + lane as u64,
        }
    }
}

pub fn substream(seed: u64, stream: Substream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}
