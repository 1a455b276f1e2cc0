//! Data-generating models: i.i.d. increments, a stationary martingale
//! difference sequence with one-step memory, and a supercritical branching
//! process in an i.i.d. random environment.
//!
//! Every sampler is a pure function of an [`RngStream`]: replication r of an
//! experiment draws from stream r of the run seed, so results are
//! bit-identical on any worker count and any execution order. Each model
//! also exposes exact closed-form moments, which the harness uses as
//! oracles instead of estimating nuisance quantities from the same data
//! under test.

mod bpre;
mod iid;
mod mds;

pub use bpre::{
    conditional_variance_bpre, envelope_inputs_bpre, env_moments, log_population_z,
    normalized_population, sample_bpre, BpreModel, EnvMoments, Trajectory,
};
pub use iid::{sample_iid, IidLaw, IidModel};
pub use mds::{sample_mds, MdsModel};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A (seed, stream) pair naming one reproducible random sequence.
///
/// The seed identifies the run; the stream id is the replication index.
/// Identical pairs produce identical draws everywhere, which is what makes
/// parallel reduction order irrelevant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Instantiate the generator for this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Random signs drawn 64 at a time from one `next_u64` block, least
/// significant bit first. Rademacher sampling is the inner loop of the
/// largest experiments, so one RNG call services 64 increments.
pub(crate) struct SignBits {
    buf: u64,
    left: u32,
}

impl SignBits {
    pub(crate) fn new() -> Self {
        Self { buf: 0, left: 0 }
    }

    #[inline]
    pub(crate) fn next<R: RngCore>(&mut self, rng: &mut R) -> f64 {
        if self.left == 0 {
            self.buf = rng.next_u64();
            self.left = 64;
        }
        let sign = if self.buf & 1 == 1 { 1.0 } else { -1.0 };
        self.buf >>= 1;
        self.left -= 1;
        sign
    }
}

/// Envelope scales must land in (0, 1/4]; model-derived raw scales are
/// clamped into that domain (a zero scale, e.g. a memoryless MDS, is floored
/// at a value whose envelope contribution is negligible).
pub(crate) fn clamp_scale(raw: f64) -> f64 {
    raw.clamp(1e-300, 0.25)
}
