//! Seeded, splittable random streams.
//!
//! Every random draw in an experiment is keyed by `(master seed, trial index,
//! purpose)`. Path noise and algorithm randomness live on disjoint streams so
//! one can be held fixed while the other is resampled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// What a stream is used for. The tag occupies the low 8 bits of the
/// ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StreamPurpose {
    /// Brownian path realization.
    Noise,
    /// Midpoint draws for the solver at ladder position `level`.
    Eta(u8),
    /// Midpoint draws for the fine self-convergence reference.
    ReferenceEta,
    /// Experiment-level choices (random indices, subsets).
    Design,
}

impl StreamPurpose {
    fn tag(self) -> u64 {
        match self {
            StreamPurpose::Noise => 0,
            StreamPurpose::Eta(level) => {
                assert!(level < 250, "eta level out of range");
                1 + level as u64
            }
            StreamPurpose::ReferenceEta => 254,
            StreamPurpose::Design => 255,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
    pub trial: u64,
}

impl RngSpec {
    pub fn new(seed: u64, trial: u64) -> Self {
        assert!(trial < (1 << 56), "trial index must fit in 56 bits");
        RngSpec { seed, trial }
    }

    pub fn stream(&self, purpose: StreamPurpose) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream((self.trial << 8) | purpose.tag());
        rng
    }
}
