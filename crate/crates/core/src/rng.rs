//! Seeded, named random streams.
//!
//! A single root seed fans out into independent ChaCha streams keyed by a
//! purpose and an index, so that e.g. candidate sampling for filter 2 is the
//! same regardless of which method or traversal order consumed other streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose of a random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Candidate designs (indexed by filter).
    Sampling,
    /// Environment resets.
    Dynamics,
    /// Stochastic action selection during training.
    Actions,
    /// Synthetic evaluator noise.
    Noise,
    /// Network initialisation.
    Init,
    /// Evaluation episodes.
    Evaluation,
    /// Post-hoc analysis (histograms, stability probes).
    Analysis,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Sampling => 1,
            Stream::Dynamics => 2,
            Stream::Actions => 3,
            Stream::Noise => 4,
            Stream::Init => 5,
            Stream::Evaluation => 6,
            Stream::Analysis => 7,
        }
    }
}

/// Root of all randomness for one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Independent generator for `(stream, index)`.
    pub fn stream(&self, stream: Stream, index: u64) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root);
        rng.set_stream(stream.tag() << 48 ^ index);
        rng
    }
}
